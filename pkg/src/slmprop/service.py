"""HTTP facade for interactive annotation: sessions, slice rendering, prompt
submission, propagation, corrections, and effort accounting.

Propagation is synchronous; a per-session non-blocking lock turns overlapping
requests into 409s. Model parameters are loaded once and shared read-only.
"""

from __future__ import annotations

import io
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .backbone import load_checkpoint
from .engine import ModelConfig, PropagationResult, propagate
from .errors import SlmError
from .metrics import evaluate_volume
from .rle import decode_mask, encode_mask
from .volume_io import MaskVolume, Volume, load_mask, load_volume, normalize_volume

DEFAULT_MAX_UPLOAD = 64 * 1024 * 1024

_OVERLAY_COLORS = [(239, 83, 80), (66, 165, 245), (102, 187, 106), (255, 202, 40)]


@dataclass
class Session:
    id: str
    volume: Volume
    results: dict[int, PropagationResult] = field(default_factory=dict)
    corrected_slices: dict[int, set] = field(default_factory=dict)
    correction_log: list = field(default_factory=list)
    spv_ms: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


def _volume_from_bytes(payload: bytes) -> Volume:
    import tempfile
    from pathlib import Path

    with tempfile.NamedTemporaryFile(suffix=".svol", delete=False) as handle:
        handle.write(payload)
        name = handle.name
    try:
        return load_volume(name)
    finally:
        Path(name).unlink(missing_ok=True)


def create_app(store=None, mcfg: ModelConfig | None = None, *,
               checkpoint: str | None = None,
               max_upload_bytes: int = DEFAULT_MAX_UPLOAD,
               static_dir: str | None = None) -> FastAPI:
    if checkpoint is not None:
        store, manifest = load_checkpoint(checkpoint)
        mcfg = ModelConfig.from_dict(manifest["model"])
    if store is None or mcfg is None:
        raise ValueError("create_app needs either a checkpoint path or (store, mcfg)")

    app = FastAPI(title="slmprop annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    sessions: dict[str, Session] = {}

    def get_session(sid: str) -> Session | None:
        return sessions.get(sid)

    @app.exception_handler(SlmError)
    async def slm_error_handler(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.body()
        if len(body) > max_upload_bytes:
            return JSONResponse(status_code=413, content={"detail": "payload too large"})
        ctype = request.headers.get("content-type", "")
        try:
            if ctype.startswith("application/json"):
                import json as _json

                path = _json.loads(body).get("path")
                volume = load_volume(path)
            else:
                volume = _volume_from_bytes(body)
        except SlmError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        except (OSError, ValueError, KeyError, TypeError) as exc:
            return JSONResponse(status_code=400, content={"detail": f"bad volume: {exc}"})
        volume = normalize_volume(volume)
        sid = uuid.uuid4().hex
        sessions[sid] = Session(sid, volume)
        return {"session_id": sid, "dims": list(volume.dims), "spacing": list(volume.spacing)}

    @app.get("/sessions/{sid}")
    def session_info(sid: str):
        s = get_session(sid)
        if s is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        return {
            "session_id": s.id,
            "dims": list(s.volume.dims),
            "spacing": list(s.volume.spacing),
            "objects": sorted(s.results),
        }

    @app.get("/sessions/{sid}/slices/{k}")
    def render_slice(sid: str, k: int, overlay: int | None = Query(default=None)):
        s = get_session(sid)
        if s is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        d, h, w = s.volume.dims
        if not 0 <= k < d:
            return JSONResponse(status_code=404, content={"detail": f"slice {k} out of range"})
        gray = np.clip(s.volume.voxels[k], 0, 255).astype(np.uint8)
        overlays = [oid for oid in sorted(s.results) if overlay is None or oid == overlay]
        if overlays:
            rgb = np.stack([gray, gray, gray], axis=-1).astype(np.float32)
            for oid in overlays:
                res = s.results[oid]
                mask = _mask_at_volume_res(res, k, (h, w))
                color = np.array(_OVERLAY_COLORS[(oid - 1) % len(_OVERLAY_COLORS)], dtype=np.float32)
                rgb[mask] = 0.55 * rgb[mask] + 0.45 * color
            img = Image.fromarray(rgb.astype(np.uint8), "RGB")
        else:
            img = Image.fromarray(gray, "L")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/sessions/{sid}/propagate")
    async def run_propagation(sid: str, payload: dict):
        s = get_session(sid)
        if s is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        d, h, w = s.volume.dims
        try:
            object_id = int(payload.get("object_id", 1))
            cond_idx = int(payload["cond_idx"])
            mask = decode_mask(payload.get("mask", ""), (h, w))
        except (KeyError, ValueError, TypeError, SlmError) as exc:
            return JSONResponse(status_code=400, content={"detail": f"bad mask payload: {exc}"})
        if not 0 <= cond_idx < d:
            return JSONResponse(status_code=400, content={"detail": f"cond_idx {cond_idx} out of range"})
        if object_id < 1:
            return JSONResponse(status_code=400, content={"detail": "object_id must be positive"})
        if not s.lock.acquire(blocking=False):
            return JSONResponse(status_code=409, content={"detail": "propagation already running"})
        try:
            result = propagate(s.volume, mask.astype(float), cond_idx, store, mcfg, object_id)
            s.results[object_id] = result
        finally:
            s.lock.release()
        return {
            "object_id": object_id,
            "cond_idx": cond_idx,
            "presence": [bool(v) for v in result.presence()],
            "areas": [int(v) for v in result.areas()],
        }

    @app.get("/sessions/{sid}/objects/{oid}/masks/{k}")
    def fetch_mask(sid: str, oid: int, k: int):
        s = get_session(sid)
        if s is None or oid not in s.results:
            return JSONResponse(status_code=404, content={"detail": "unknown session or object"})
        d, h, w = s.volume.dims
        if not 0 <= k < d:
            return JSONResponse(status_code=404, content={"detail": f"slice {k} out of range"})
        mask = _mask_at_volume_res(s.results[oid], k, (h, w))
        return {"slice": k, "shape": [h, w], "rle": encode_mask(mask)}

    @app.post("/sessions/{sid}/corrections")
    async def record_correction(sid: str, payload: dict):
        s = get_session(sid)
        if s is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        if not s.results:
            return JSONResponse(status_code=400, content={"detail": "no propagation to correct"})
        d, h, w = s.volume.dims
        try:
            object_id = int(payload.get("object_id", 1))
            slice_idx = int(payload["slice_idx"])
            elapsed_ms = int(payload.get("elapsed_ms", 0))
            mask = decode_mask(payload.get("mask", ""), (h, w))
        except (KeyError, ValueError, TypeError, SlmError) as exc:
            return JSONResponse(status_code=400, content={"detail": f"bad correction: {exc}"})
        if object_id not in s.results:
            return JSONResponse(status_code=400, content={"detail": f"no result for object {object_id}"})
        if not 0 <= slice_idx < d or elapsed_ms < 0:
            return JSONResponse(status_code=400, content={"detail": "bad slice index or time"})
        res = s.results[object_id]
        before = _mask_at_volume_res(res, slice_idx, (h, w))
        _write_mask_at_volume_res(res, slice_idx, mask)
        s.corrected_slices.setdefault(object_id, set()).add(slice_idx)
        s.spv_ms += elapsed_ms
        s.correction_log.append({
            "object_id": object_id,
            "slice_idx": slice_idx,
            "elapsed_ms": elapsed_ms,
            "timestamp": time.time(),
            "before_rle": encode_mask(before),
            "after_rle": encode_mask(mask),
        })
        corrected = sorted(set().union(*s.corrected_slices.values()))
        return {
            "corrected_slices": corrected,
            "csr": len(corrected) / d,
            "spv_seconds": s.spv_ms / 1000.0,
        }

    @app.get("/sessions/{sid}/effort")
    def effort(sid: str):
        s = get_session(sid)
        if s is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        corrected = sorted(set().union(*s.corrected_slices.values())) if s.corrected_slices else []
        return {
            "corrected_slices": corrected,
            "csr": len(corrected) / s.volume.dims[0],
            "spv_seconds": s.spv_ms / 1000.0,
            "corrections": len(s.correction_log),
        }

    @app.get("/sessions/{sid}/metrics")
    def session_metrics(sid: str, gt: str, object_id: int = 1):
        s = get_session(sid)
        if s is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        if object_id not in s.results:
            return JSONResponse(status_code=400, content={"detail": f"no result for object {object_id}"})
        try:
            gt_mask = load_mask(gt)
        except (SlmError, OSError) as exc:
            return JSONResponse(status_code=400, content={"detail": f"bad gt: {exc}"})
        d, h, w = s.volume.dims
        if gt_mask.dims != (d, h, w):
            return JSONResponse(status_code=400, content={"detail": "gt dims mismatch"})
        pred = _result_mask_volume(s.results[object_id], (d, h, w), object_id)
        report = evaluate_volume(pred, gt_mask, object_id, spacing=s.volume.spacing)
        return report.to_dict()

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def _mask_at_volume_res(res: PropagationResult, k: int, hw: tuple[int, int]) -> np.ndarray:
    from .volume_io import resize_slice

    mask = res.binary()[k]
    if mask.shape != hw:
        mask = resize_slice(mask.astype(np.uint8), hw, labels=True).astype(bool)
    return mask


def _write_mask_at_volume_res(res: PropagationResult, k: int, mask: np.ndarray) -> None:
    from .volume_io import resize_slice

    target = res.probs[k].shape
    m = mask
    if m.shape != target:
        m = resize_slice(m.astype(np.uint8), target, labels=True).astype(bool)
    res.probs[k] = m.astype(np.float32)


def _result_mask_volume(res: PropagationResult, dims, object_id: int) -> MaskVolume:
    d, h, w = dims
    labels = np.zeros((d, h, w), dtype=np.uint8)
    for k in range(d):
        labels[k][_mask_at_volume_res(res, k, (h, w))] = object_id
    return MaskVolume(labels, object_ids=(object_id,))
