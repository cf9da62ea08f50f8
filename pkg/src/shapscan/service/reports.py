"""Deterministic report assembly from a scan's event-derived state.

Reports are a pure function of the event log and the stored image:
regenerating a report with an unchanged log yields byte-identical
output, which the replay tests rely on.
"""

from __future__ import annotations

import json

from ..imaging import classify_response, measure_lesion
from .store import ScanStore


def _plural(count: int, noun: str) -> str:
    return f"{count} {noun}{'' if count == 1 else 's'}"


def build_report(store: ScanStore, scan_id: str, measure_threshold: float = 0.5) -> dict:
    state = store.state(scan_id)
    image = store.image(scan_id)
    detections = list(state.detections.values())
    confirmed = [d for d in detections if d.status == "confirmed"]
    rejected = [d for d in detections if d.status == "rejected"]
    pending = [d for d in detections if d.status == "pending"]

    measurements = [measure_lesion(image, det, threshold=measure_threshold)
                    for det in confirmed]
    total_mm = sum(m.diameter_mm for m in measurements)

    prior_comparison = None
    prior_id = _prior_scan(store, state.scan_id, state.patient_label)
    if prior_id is not None:
        prior_state = store.state(prior_id)
        prior_image = store.image(prior_id)
        prior_total = sum(
            measure_lesion(prior_image, det, threshold=measure_threshold).diameter_mm
            for det in prior_state.detections.values()
            if det.status == "confirmed"
        )
        if prior_total > 0:
            assessment = classify_response(prior_total, total_mm)
            prior_comparison = {
                "prior_scan_id": prior_id,
                "baseline_sum_mm": prior_total,
                "followup_sum_mm": total_mm,
                "delta_percent": assessment.delta_percent,
                "progression": assessment.progression,
            }
        else:
            prior_comparison = {
                "prior_scan_id": prior_id,
                "baseline_sum_mm": prior_total,
                "followup_sum_mm": total_mm,
                "delta_percent": None,
                "progression": None,
            }

    narrative = _narrative(state, confirmed, rejected, pending, measurements,
                           total_mm, prior_comparison)
    return {
        "scan_id": state.scan_id,
        "patient_label": state.patient_label,
        "created": state.created,
        "finalized": state.finalized,
        "counts": {
            "confirmed": len(confirmed),
            "rejected": len(rejected),
            "pending": len(pending),
        },
        "detections": [
            {
                "id": d.id,
                "region": d.region.as_dict(),
                "score": d.score,
                "status": d.status,
                "source": d.source,
            }
            for d in detections
        ],
        "measurements": [
            {
                "detection_id": m.detection_id,
                "diameter_mm": m.diameter_mm,
                "centroid": [m.centroid[0], m.centroid[1]],
                "warning": m.warning,
            }
            for m in measurements
        ],
        "total_diameter_mm": total_mm,
        "prior_comparison": prior_comparison,
        "explanations": sorted(state.explanations),
        "narrative": narrative,
    }


def report_bytes(report: dict) -> bytes:
    return json.dumps(report, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _prior_scan(store: ScanStore, scan_id: str, patient_label: str):
    """Most recent earlier scan carrying the same patient label."""
    if not patient_label:
        return None
    earlier = [
        other
        for other in store.scan_ids()
        if other < scan_id and store.state(other).patient_label == patient_label
    ]
    return earlier[-1] if earlier else None


def _narrative(state, confirmed, rejected, pending, measurements, total_mm,
               prior_comparison) -> str:
    lines = []
    if not state.detections:
        lines.append("No lesions detected.")
    else:
        lines.append(
            f"{_plural(len(confirmed), 'confirmed lesion')}; "
            f"{_plural(len(rejected), 'rejected candidate')}; "
            f"{_plural(len(pending), 'pending candidate')}."
        )
    for m in measurements:
        line = (f"Lesion {m.detection_id} at ({m.centroid[0]:.1f}, {m.centroid[1]:.1f}) px: "
                f"diameter {m.diameter_mm:.2f} mm.")
        if m.warning:
            line += f" (warning: {m.warning})"
        lines.append(line)
    if confirmed:
        lines.append(f"Sum of confirmed diameters: {total_mm:.2f} mm.")
    if prior_comparison is not None:
        if prior_comparison["delta_percent"] is None:
            lines.append(
                f"Prior scan {prior_comparison['prior_scan_id']} has no measurable "
                f"confirmed lesions; response not assessed."
            )
        else:
            label = "progression" if prior_comparison["progression"] else "non-progression"
            lines.append(
                f"Change vs prior scan {prior_comparison['prior_scan_id']} "
                f"({prior_comparison['baseline_sum_mm']:.2f} mm): "
                f"{prior_comparison['delta_percent']:+.1f}% ({label})."
            )
    if state.finalized:
        lines.append("Review complete: all detections resolved.")
    elif pending:
        lines.append(f"Review incomplete: {_plural(len(pending), 'detection')} pending.")
    return "\n".join(lines)
