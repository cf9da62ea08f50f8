"""Event-sourced persistence for scans, detections, reviews, and explanations.

Every state change is an event appended to a per-scan JSON-lines log;
in-memory state is only ever produced by applying events, so replaying a
log reconstructs live state exactly.  Image bytes and heatmap artifacts
live next to the log as plain files.  Writes to one scan are serialized
by a per-scan lock (single writer per scan); different scans may be
written concurrently.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional

from ..errors import NotFoundError, ParameterError, StateConflictError
from ..imaging import Detection, Region, ScanImage, detect_lesions, parse_image

_REVIEW_ACTIONS = {"confirm": "confirmed", "reject": "rejected"}


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass
class ScanState:
    scan_id: str
    patient_label: str = ""
    created: str = ""
    image_file: str = ""
    spacing: float = 1.0
    finalized: bool = False
    detections: Dict[str, Detection] = field(default_factory=dict)
    explanations: Dict[str, dict] = field(default_factory=dict)
    events: List[dict] = field(default_factory=list)
    detection_count: int = 0
    explanation_count: int = 0

    def pending_ids(self) -> List[str]:
        return [d.id for d in self.detections.values() if d.status == "pending"]


def _region_from(value: dict) -> Region:
    try:
        return Region(x=int(value["x"]), y=int(value["y"]),
                      w=int(value["w"]), h=int(value["h"]))
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"malformed region: {value!r}") from exc


def _apply_event(state: ScanState, event: dict) -> None:
    """The single transition function used for both live updates and replay."""
    kind = event["type"]
    if kind == "scan_created":
        state.patient_label = event["patient_label"]
        state.created = event["ts"]
        state.image_file = event["image_file"]
        state.spacing = float(event.get("spacing", 1.0))
    elif kind == "detection_added":
        det = Detection(
            id=event["detection_id"],
            region=_region_from(event["region"]),
            score=float(event["score"]),
            status=event["status"],
            source=event["source"],
        )
        state.detections[det.id] = det
        state.detection_count += 1
    elif kind == "detection_reviewed":
        det = state.detections.get(event["detection_id"])
        if det is None:
            raise ParameterError(f"event references unknown detection {event['detection_id']}")
        det.status = _REVIEW_ACTIONS[event["action"]]
    elif kind == "explanation_added":
        state.explanations[event["explanation_id"]] = event
        state.explanation_count += 1
    elif kind == "scan_finalized":
        state.finalized = True
    else:
        raise ParameterError(f"unknown event type {kind!r}")
    state.events.append(event)


class ScanStore:
    """Append-only scan store rooted at ``data_dir``.

    ``clock`` is injectable for deterministic timestamps in tests.
    """

    def __init__(self, data_dir, clock: Optional[Callable[[], str]] = None,
                 detect_threshold: float = 0.5, detect_min_area: int = 4):
        self.root = Path(data_dir)
        self.scans_dir = self.root / "scans"
        self.scans_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or utc_now_iso
        self.detect_threshold = detect_threshold
        self.detect_min_area = detect_min_area
        self._states: Dict[str, ScanState] = {}
        self._detection_index: Dict[str, str] = {}
        self._explanation_index: Dict[str, str] = {}
        self._images: Dict[str, ScanImage] = {}
        self._global_lock = threading.Lock()
        self._scan_locks: Dict[str, threading.Lock] = {}
        self._load_existing()

    # -- loading / replay -------------------------------------------------

    def _load_existing(self) -> None:
        for scan_dir in sorted(self.scans_dir.iterdir()) if self.scans_dir.exists() else []:
            log = scan_dir / "events.jsonl"
            if not scan_dir.is_dir() or not log.is_file():
                continue
            state = ScanState(scan_id=scan_dir.name)
            for line in log.read_text().splitlines():
                if line.strip():
                    _apply_event(state, json.loads(line))
            self._register(state)

    def _register(self, state: ScanState) -> None:
        self._states[state.scan_id] = state
        self._scan_locks[state.scan_id] = threading.Lock()
        for det_id in state.detections:
            self._detection_index[det_id] = state.scan_id
        for exp_id in state.explanations:
            self._explanation_index[exp_id] = state.scan_id

    # -- helpers -----------------------------------------------------------

    def _scan_dir(self, scan_id: str) -> Path:
        return self.scans_dir / scan_id

    def _log_path(self, scan_id: str) -> Path:
        return self._scan_dir(scan_id) / "events.jsonl"

    def _append(self, state: ScanState, event: dict) -> dict:
        event = {"event_id": f"ev-{len(state.events) + 1:04d}", "ts": self.clock(), **event}
        _apply_event(state, event)
        with self._log_path(state.scan_id).open("a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        return event

    def state(self, scan_id: str) -> ScanState:
        state = self._states.get(scan_id)
        if state is None:
            raise NotFoundError(f"unknown scan {scan_id!r}")
        return state

    def scan_ids(self) -> List[str]:
        return sorted(self._states)

    def scan_lock(self, scan_id: str) -> threading.Lock:
        self.state(scan_id)
        return self._scan_locks[scan_id]

    def image(self, scan_id: str) -> ScanImage:
        state = self.state(scan_id)
        if scan_id not in self._images:
            data = (self._scan_dir(scan_id) / state.image_file).read_bytes()
            self._images[scan_id] = parse_image(data, spacing=state.spacing)
        return self._images[scan_id]

    # -- operations ---------------------------------------------------------

    def create_scan(self, image_bytes: bytes, patient_label: str = "",
                    spacing: float = 1.0) -> ScanState:
        """Validate and persist an upload, then detect and record candidates.

        The image is parsed before anything touches disk, so a corrupt
        upload persists nothing.
        """
        image = parse_image(image_bytes, spacing=spacing)
        detections = detect_lesions(image, threshold=self.detect_threshold,
                                    min_area=self.detect_min_area)
        with self._global_lock:
            seq = len(self._states) + 1
            scan_id = f"scan-{seq:04d}"
            while scan_id in self._states:
                seq += 1
                scan_id = f"scan-{seq:04d}"
            state = ScanState(scan_id=scan_id)
            self._states[scan_id] = state
            self._scan_locks[scan_id] = threading.Lock()
        ext = "png" if image_bytes[:8] == b"\x89PNG\r\n\x1a\n" else "pgm"
        scan_dir = self._scan_dir(scan_id)
        scan_dir.mkdir(parents=True, exist_ok=True)
        (scan_dir / f"image.{ext}").write_bytes(image_bytes)
        self._images[scan_id] = image
        with self._scan_locks[scan_id]:
            self._append(state, {
                "type": "scan_created",
                "scan_id": scan_id,
                "patient_label": patient_label,
                "image_file": f"image.{ext}",
                "spacing": spacing,
            })
            for det in detections:
                det_id = f"{scan_id}-{det.id}"
                self._append(state, {
                    "type": "detection_added",
                    "detection_id": det_id,
                    "region": det.region.as_dict(),
                    "score": det.score,
                    "status": "pending",
                    "source": "automatic",
                    "actor": "detector",
                })
                self._detection_index[det_id] = scan_id
        return state

    def scan_of_detection(self, detection_id: str) -> str:
        scan_id = self._detection_index.get(detection_id)
        if scan_id is None:
            raise NotFoundError(f"unknown detection {detection_id!r}")
        return scan_id

    def review_detection(self, detection_id: str, action: str, actor: str) -> Detection:
        if action not in _REVIEW_ACTIONS:
            raise ParameterError(f"action must be 'confirm' or 'reject', got {action!r}")
        scan_id = self.scan_of_detection(detection_id)
        state = self.state(scan_id)
        with self._scan_locks[scan_id]:
            self._append(state, {
                "type": "detection_reviewed",
                "detection_id": detection_id,
                "action": action,
                "actor": actor,
            })
            return state.detections[detection_id]

    def add_detection(self, scan_id: str, region: Region, actor: str):
        """Record a clinician-added detection; returns (detection, warning)."""
        state = self.state(scan_id)
        region.require_within(self.image(scan_id))
        with self._scan_locks[scan_id]:
            duplicate = next(
                (d.id for d in state.detections.values() if d.region == region), None
            )
            det_id = f"{scan_id}-det-{state.detection_count + 1:03d}"
            self._append(state, {
                "type": "detection_added",
                "detection_id": det_id,
                "region": region.as_dict(),
                "score": 1.0,
                "status": "confirmed",
                "source": "clinician",
                "actor": actor,
            })
            self._detection_index[det_id] = scan_id
            warning = f"region duplicates existing detection {duplicate}" if duplicate else None
            return state.detections[det_id], warning

    def add_explanation(self, scan_id: str, actor: str,
                        build: Callable[[str], dict]) -> dict:
        """Assign an explanation id and persist the record ``build`` produces.

        ``build(explanation_id)`` runs under the scan lock; it computes
        the heatmap, writes the artifact files, and returns the
        JSON-able event fields.
        """
        state = self.state(scan_id)
        with self._scan_locks[scan_id]:
            exp_id = f"{scan_id}-exp-{state.explanation_count + 1:03d}"
            record = build(exp_id)
            event = self._append(state, {
                "type": "explanation_added",
                "explanation_id": exp_id,
                "actor": actor,
                **record,
            })
            self._explanation_index[exp_id] = scan_id
            return event

    def explanation(self, explanation_id: str) -> dict:
        scan_id = self._explanation_index.get(explanation_id)
        if scan_id is None:
            raise NotFoundError(f"unknown explanation {explanation_id!r}")
        return self.state(scan_id).explanations[explanation_id]

    def explanation_dir(self, scan_id: str) -> Path:
        path = self._scan_dir(scan_id) / "explanations"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def finalize(self, scan_id: str, actor: str) -> ScanState:
        state = self.state(scan_id)
        with self._scan_locks[scan_id]:
            pending = state.pending_ids()
            if pending:
                raise StateConflictError(
                    f"cannot finalize {scan_id}: pending detections remain: {', '.join(pending)}"
                )
            if not state.finalized:
                self._append(state, {"type": "scan_finalized", "actor": actor})
            return state

    # -- snapshots ----------------------------------------------------------

    def snapshot(self) -> dict:
        """Canonical, comparison-friendly view of all event-derived state."""
        out = {}
        for scan_id in self.scan_ids():
            state = self._states[scan_id]
            out[scan_id] = {
                "patient_label": state.patient_label,
                "created": state.created,
                "image_file": state.image_file,
                "spacing": state.spacing,
                "finalized": state.finalized,
                "detections": [
                    {
                        "id": d.id,
                        "region": d.region.as_dict(),
                        "score": d.score,
                        "status": d.status,
                        "source": d.source,
                    }
                    for d in state.detections.values()
                ],
                "explanations": sorted(state.explanations),
                "events": list(state.events),
            }
        return out
