"""FastAPI wiring for the review workflow.

Endpoints mirror the review loop: upload a scan, read its report,
confirm/reject/add detections, request patch-attribution heatmaps, and
finalize once nothing is pending.  All errors use a structured body
``{"code": ..., "message": ...}``.
"""

from __future__ import annotations

import base64
import binascii
import io
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel
from PIL import Image as PILImage

from ..errors import (
    CapacityError,
    DimensionError,
    ImageFormatError,
    NotFoundError,
    ParameterError,
    PredictorError,
    StateConflictError,
)
from ..imaging import BackgroundSpec, Region, explain_region, save_heatmap
from ..models import load_predictor
from .config import ServiceConfig, load_config
from .reports import build_report, report_bytes
from .store import ScanStore

_ERROR_STATUS = [
    (NotFoundError, 404, "not_found"),
    (StateConflictError, 409, "conflict"),
    (CapacityError, 422, "budget_exceeded"),
    (ImageFormatError, 400, "invalid_image"),
    (DimensionError, 400, "dimension_mismatch"),
    (ParameterError, 400, "invalid_parameter"),
    (PredictorError, 502, "predictor_failure"),
]


class ScanIn(BaseModel):
    patient_label: str = ""
    image_base64: str
    spacing: float = 1.0


class RegionIn(BaseModel):
    x: int
    y: int
    w: int
    h: int


class ReviewIn(BaseModel):
    action: str
    actor: str = "clinician"


class AddDetectionIn(BaseModel):
    region: RegionIn
    actor: str = "clinician"


class FinalizeIn(BaseModel):
    actor: str = "clinician"


class ExplainIn(BaseModel):
    scan_id: str
    detection_id: Optional[str] = None
    region: Optional[RegionIn] = None
    gx: Optional[int] = None
    gy: Optional[int] = None
    chi: Optional[int] = None
    actor: str = "clinician"


def _detection_json(det) -> dict:
    return {
        "id": det.id,
        "region": det.region.as_dict(),
        "score": det.score,
        "status": det.status,
        "source": det.source,
    }


def _scan_json(state) -> dict:
    return {
        "scan_id": state.scan_id,
        "patient_label": state.patient_label,
        "created": state.created,
        "finalized": state.finalized,
        "pending": len(state.pending_ids()),
        "detections": [_detection_json(d) for d in state.detections.values()],
        "explanations": sorted(state.explanations),
    }


def create_app(config: Optional[ServiceConfig] = None, clock=None) -> FastAPI:
    config = config or load_config()
    store = ScanStore(
        config.data_dir,
        clock=clock,
        detect_threshold=config.detect_threshold,
        detect_min_area=config.detect_min_area,
    )
    app = FastAPI(title="shapscan review service")
    app.state.store = store
    app.state.config = config

    def _predictor_for(m: int):
        spec = dict(config.model_spec)
        if spec.get("kind") in ("threshold-blob", "product"):
            spec["arity"] = m
        model = load_predictor(spec)
        if model.arity != m:
            raise ParameterError(
                f"configured model expects {model.arity} features but the grid has {m} patches"
            )
        return model

    for exc_type, status, code in _ERROR_STATUS:
        def _handler(request: Request, exc, status=status, code=code):
            message = str(exc)
            # KeyError subclasses repr their message; unwrap the quotes
            if isinstance(exc, KeyError) and exc.args:
                message = str(exc.args[0])
            return JSONResponse(status_code=status, content={"code": code, "message": message})

        app.add_exception_handler(exc_type, _handler)

    @app.exception_handler(RequestValidationError)
    def _validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"code": "validation_error", "message": str(exc.errors())})

    @app.get("/scans")
    def list_scans():
        return {"scans": [_scan_json(store.state(s)) for s in store.scan_ids()]}

    @app.post("/scans", status_code=201)
    def create_scan(body: ScanIn):
        try:
            image_bytes = base64.b64decode(body.image_base64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ImageFormatError(f"image_base64 is not valid base64: {exc}") from exc
        state = store.create_scan(image_bytes, patient_label=body.patient_label,
                                  spacing=body.spacing)
        return {
            "scan": _scan_json(state),
            "report": build_report(store, state.scan_id, config.measure_threshold),
        }

    @app.get("/scans/{scan_id}")
    def get_scan(scan_id: str):
        return _scan_json(store.state(scan_id))

    @app.get("/scans/{scan_id}/report")
    def get_report(scan_id: str):
        report = build_report(store, scan_id, config.measure_threshold)
        return Response(content=report_bytes(report), media_type="application/json")

    @app.get("/scans/{scan_id}/image.png")
    def get_image_png(scan_id: str):
        image = store.image(scan_id)
        gray = np.clip(np.round(image.intensities * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        PILImage.fromarray(gray, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/detections/{detection_id}/review")
    def review_detection(detection_id: str, body: ReviewIn):
        det = store.review_detection(detection_id, body.action, body.actor)
        return {"detection": _detection_json(det)}

    @app.post("/scans/{scan_id}/detections", status_code=201)
    def add_detection(scan_id: str, body: AddDetectionIn):
        region = Region(x=body.region.x, y=body.region.y, w=body.region.w, h=body.region.h)
        det, warning = store.add_detection(scan_id, region, body.actor)
        payload = {"detection": _detection_json(det)}
        if warning:
            payload["warning"] = warning
        return payload

    @app.post("/scans/{scan_id}/finalize")
    def finalize(scan_id: str, body: FinalizeIn):
        state = store.finalize(scan_id, body.actor)
        return {"scan_id": scan_id, "finalized": state.finalized}

    @app.post("/explanations", status_code=201)
    def request_explanation(body: ExplainIn):
        state = store.state(body.scan_id)
        if (body.detection_id is None) == (body.region is None):
            raise ParameterError("provide exactly one of detection_id or region")
        if body.detection_id is not None:
            det = state.detections.get(body.detection_id)
            if det is None:
                raise NotFoundError(f"unknown detection {body.detection_id!r}")
            region = det.region
        else:
            region = Region(x=body.region.x, y=body.region.y,
                            w=body.region.w, h=body.region.h)
        gx = body.gx if body.gx is not None else config.default_gx
        gy = body.gy if body.gy is not None else config.default_gy
        requested_chi = body.chi if body.chi is not None else config.default_chi
        m = gx * gy
        chi_cap = (m + 1) // 2
        chi = min(requested_chi, chi_cap)
        note = None
        if requested_chi > chi_cap:
            note = (f"chi clamped to ceil(m/2) = {chi_cap}; larger depths add no "
                    f"coalitions for m = {m}")
        image = store.image(body.scan_id)
        model = _predictor_for(m)
        heatmap = explain_region(
            image, region, (gx, gy), model,
            BackgroundSpec(**config.background), chi,
            background_cap=config.background_cap,
            eval_budget=config.eval_budget,
        )
        out_dir = store.explanation_dir(body.scan_id)

        def build(exp_id: str) -> dict:
            pgm_path, json_path = save_heatmap(heatmap, out_dir / exp_id)
            order = sorted(range(m), key=lambda i: (-abs(heatmap.phis[i]), i))
            top = [
                {"feature": i, "phi": float(heatmap.phis[i])}
                for i in order[:5]
            ]
            return {
                "detection_id": body.detection_id,
                "region": region.as_dict(),
                "params": {"gx": gx, "gy": gy, "chi": chi, "requested_chi": requested_chi},
                "phi0": heatmap.phi0,
                "prediction": heatmap.prediction,
                "phis": [float(v) for v in heatmap.phis],
                "top_patches": top,
                "artifacts": {
                    "pgm": str(pgm_path.relative_to(store.root)),
                    "json": str(json_path.relative_to(store.root)),
                },
                "note": note,
            }

        event = store.add_explanation(body.scan_id, body.actor, build)
        return {
            "explanation_id": event["explanation_id"],
            "phi0": event["phi0"],
            "prediction": event["prediction"],
            "top_patches": event["top_patches"],
            "params": event["params"],
            "note": event["note"],
        }

    @app.get("/explanations/{explanation_id}")
    def get_explanation(explanation_id: str):
        record = store.explanation(explanation_id)
        scan_id = store._explanation_index[explanation_id]
        sidecar_path = store.root / record["artifacts"]["json"]
        artifact = sidecar_path.read_text() if sidecar_path.is_file() else None
        payload = dict(record)
        payload["artifact_json"] = artifact
        return payload

    if config.ui_dir and Path(config.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app
