"""Session-oriented HTTP API for the interactive loop.

One session per uploaded image; the feature pyramid is computed once at
upload. Masks travel as run-length encodings ({width, height, counts} with
flat start/length pairs). Mutating requests on one session serialize on a
per-session lock; different sessions proceed independently (sync endpoints
run on the server's thread pool). Model weights are loaded once and never
mutated.
"""

from __future__ import annotations

import io
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import JSONResponse
from PIL import Image

from .backbone import FeaturePyramid
from .clickseg import ClickSet, InstanceMask
from .ids import IdsParams, IterationSnapshot, PipelineModels, run_ids
from .masks import rle_encode


@dataclass
class ServiceConfig:
    max_image_bytes: int = 8 * 1024 * 1024
    max_pixels: int = 1024 * 1024
    session_ttl_s: float = 3600.0


@dataclass
class MaskEntry:
    mask: np.ndarray
    score: float
    click: tuple[int, int] | None
    group: int
    similarity: float = 1.0


@dataclass
class Session:
    id: str
    image: np.ndarray
    pyramid: FeaturePyramid
    entries: list[MaskEntry] = field(default_factory=list)
    history: list[list[MaskEntry]] = field(default_factory=list)
    next_group: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_access: float = field(default_factory=time.monotonic)


def entry_json(e: MaskEntry) -> dict:
    return {"mask": rle_encode(e.mask), "score": e.score,
            "similarity": e.similarity, "group": e.group,
            "click": list(e.click) if e.click else None}


def snapshot_json(s: IterationSnapshot) -> dict:
    return {"iteration": s.iteration,
            "new_clicks": [[x, y, c] for x, y, c in s.new_clicks],
            "accepted_clicks": [[x, y] for x, y in s.accepted_clicks],
            "masks": [{"mask": rle_encode(m.mask), "score": m.score,
                       "similarity": sim} for m, sim in s.accepted]}


def create_app(models: PipelineModels, config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="clickmine", version="0.1.0")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def _purge_expired() -> None:
        now = time.monotonic()
        with registry_lock:
            dead = [sid for sid, s in sessions.items()
                    if now - s.last_access > config.session_ttl_s]
            for sid in dead:
                del sessions[sid]

    def _get(session_id: str) -> Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        if time.monotonic() - session.last_access > config.session_ttl_s:
            with registry_lock:
                sessions.pop(session_id, None)
            raise HTTPException(status_code=404, detail="session expired")
        session.last_access = time.monotonic()
        return session

    @app.post("/sessions", status_code=201)
    def create_session(body: bytes = Body(media_type="application/octet-stream")):
        _purge_expired()
        if len(body) > config.max_image_bytes:
            raise HTTPException(status_code=413, detail="image too large")
        try:
            image = np.asarray(Image.open(io.BytesIO(body)).convert("RGB"))
        except Exception:
            raise HTTPException(status_code=415, detail="undecodable image")
        h, w = image.shape[:2]
        if h * w > config.max_pixels:
            raise HTTPException(status_code=413, detail="too many pixels")
        pyramid = models.segmenter.backbone.extract(image)
        session = Session(id=uuid.uuid4().hex, image=image, pyramid=pyramid)
        with registry_lock:
            sessions[session.id] = session
        return {"session_id": session.id,
                "image_size": {"width": w, "height": h}}

    @app.post("/sessions/{session_id}/click")
    def click(session_id: str, payload: dict = Body(...)):
        session = _get(session_id)
        try:
            x, y = int(payload["x"]), int(payload["y"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(status_code=422, detail="payload needs integer x, y")
        h, w = session.image.shape[:2]
        if not (0 <= x < w and 0 <= y < h):
            raise HTTPException(status_code=422, detail="click out of bounds")
        with session.lock:
            results = models.segmenter.segment_clicks(session.pyramid,
                                                      ClickSet([(x, y)]))
            found = results[0] if results else None
            session.history.append(list(session.entries))
            if found is not None:
                entry = MaskEntry(mask=found.mask, score=found.score,
                                  click=(x, y), group=session.next_group)
                session.next_group += 1
                session.entries.append(entry)
                return {"mask": rle_encode(found.mask), "score": found.score}
            empty = np.zeros((h, w), dtype=bool)
            return {"mask": rle_encode(empty), "score": 0.0}

    @app.post("/sessions/{session_id}/find-similar")
    def find_similar(session_id: str, payload: dict | None = Body(None)):
        session = _get(session_id)
        payload = payload or {}
        params = IdsParams(
            iterations=int(payload.get("iterations", IdsParams.iterations)),
            top_k=int(payload.get("top_k", IdsParams.top_k)),
            exemplar_count=int(payload.get("exemplars", IdsParams.exemplar_count)),
        )
        with session.lock:
            target_entry = next((e for e in reversed(session.entries)
                                 if e.click is not None), None)
            if target_entry is None:
                raise HTTPException(status_code=409,
                                    detail="no prior click to expand")
            target = InstanceMask(mask=target_entry.mask, score=target_entry.score,
                                  source_click=target_entry.click,
                                  box=_mask_box(target_entry.mask))
            state, snaps = run_ids(models, target, session.pyramid,
                                   session.image, params)
            session.history.append(list(session.entries))
            group = target_entry.group
            session.entries = [e for e in session.entries if e is not target_entry]
            new_entries = []
            for inst, sim in state.accepted:
                click = inst.source_click if inst.source_click != (-1, -1) else None
                new_entries.append(MaskEntry(mask=inst.mask, score=inst.score,
                                             click=click, group=group,
                                             similarity=sim))
            session.entries.extend(new_entries)
            return {"masks": [entry_json(e) for e in new_entries],
                    "clicks": [[x, y] for x, y in state.accepted_clicks],
                    "iterations": [snapshot_json(s) for s in snaps]}

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        session = _get(session_id)
        with session.lock:
            if session.history:
                session.entries = session.history.pop()
            return {"masks_count": len(session.entries),
                    "history_depth": len(session.history)}

    @app.get("/sessions/{session_id}/masks")
    def masks(session_id: str):
        session = _get(session_id)
        with session.lock:
            return {"masks": [entry_json(e) for e in session.entries]}

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        session = _get(session_id)
        h, w = session.image.shape[:2]
        with session.lock:
            doc = {
                "width": w, "height": h,
                "index": [{"id": i, "group": e.group, "score": e.score,
                           "similarity": e.similarity,
                           "click": list(e.click) if e.click else None}
                          for i, e in enumerate(session.entries)],
                "masks": [rle_encode(e.mask) for e in session.entries],
            }
        return JSONResponse(doc, headers={
            "Content-Disposition": 'attachment; filename="masks.json"'})

    return app


def _mask_box(mask: np.ndarray) -> tuple[float, float, float, float]:
    from .masks import mask_bbox
    x0, y0, x1, y1 = mask_bbox(mask)
    return (float(x0), float(y0), float(x1 + 1), float(y1 + 1))
