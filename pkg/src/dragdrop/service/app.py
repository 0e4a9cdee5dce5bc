"""HTTP session backend for interactive annotation.

Volumes are immutable after upload; every session mutation is appended to an
edit log so a session can be replayed bit-exactly. Propagation runs in a
background thread per session; mutations during a run get 409. All endpoints
live under /v1.
"""

from __future__ import annotations

import io
import json
import threading
import uuid
from dataclasses import asdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response
from PIL import Image
from pydantic import BaseModel, Field

from ..annotation import DragDropAnnotation, RefinementClick
from ..propagation import (
    PropagationConfig,
    PropagationError,
    PseudoLabel,
    _propagate_full,
)
from ..volume import LabelVolume, Volume, VolumeIOError, load_volume, render_slice
from .. import volume as volio


class VolumeInfo(BaseModel):
    volume_id: str
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]


class FromPathRequest(BaseModel):
    path: str
    format: str | None = None


class CreateSessionRequest(BaseModel):
    volume_id: str
    config: dict = Field(default_factory=dict)


class CreateSessionResponse(BaseModel):
    session_id: str


class AnnotationRequest(BaseModel):
    center_mm: tuple[float, float, float]
    radius_mm: float = Field(gt=0)
    class_id: int = Field(default=1, ge=1)
    lesion_id: int | None = None


class AnnotationResponse(BaseModel):
    lesion_id: int
    warnings: list[str]


class ClickModel(BaseModel):
    voxel: tuple[int, int, int]
    polarity: str


class RefineRequest(BaseModel):
    clicks: list[ClickModel]


class StatusResponse(BaseModel):
    state: str  # idle | propagating | done | error
    error: str | None = None


class SummaryResponse(BaseModel):
    state: str
    annotation_count: int
    foreground_voxels: int | None = None
    uncertain_voxels: int | None = None
    config: dict


class _Session:
    def __init__(self, session_id: str, volume_id: str, cfg: PropagationConfig):
        self.id = session_id
        self.volume_id = volume_id
        self.config = cfg
        self.annotations: list[DragDropAnnotation] = []
        self.clicks: list[RefinementClick] = []
        self.label: PseudoLabel | None = None
        self.state = "idle"
        self.error: str | None = None
        self.log: list[dict] = []
        self.lock = threading.Lock()
        self.next_lesion_id = 1


class ServiceState:
    def __init__(self, data_dir: Path):
        self.data_dir = data_dir
        self.volumes: dict[str, Volume] = {}
        self.sessions: dict[str, _Session] = {}
        data_dir.mkdir(parents=True, exist_ok=True)
        (data_dir / "volumes").mkdir(exist_ok=True)
        (data_dir / "sessions").mkdir(exist_ok=True)

    def persist_log(self, sess: _Session) -> None:
        path = self.data_dir / "sessions" / f"{sess.id}.json"
        path.write_text(json.dumps(
            {"session_id": sess.id, "volume_id": sess.volume_id,
             "log": sess.log},
            sort_keys=True, indent=2) + "\n")


def replay_log(vol: Volume, log: list[dict]) -> PseudoLabel | None:
    """Rebuild the session's label from its edit log; None when the log never
    propagated."""
    cfg = PropagationConfig()
    anns: list[DragDropAnnotation] = []
    clicks: list[RefinementClick] = []
    propagated = False
    for entry in log:
        op = entry["op"]
        if op == "config":
            cfg = PropagationConfig(**entry["config"])
        elif op == "annotation":
            a = entry["annotation"]
            anns.append(DragDropAnnotation(
                center_mm=tuple(a["center_mm"]),
                radius_mm=a["radius_mm"],
                class_id=a.get("class_id", 1),
                lesion_id=a["lesion_id"],
            ))
        elif op == "refine":
            clicks.extend(
                RefinementClick(tuple(c["voxel"]), c["polarity"])
                for c in entry["clicks"]
            )
            propagated = True
        elif op == "propagate":
            propagated = True
    if not propagated:
        return None
    return _propagate_full(vol, anns, cfg, tuple(dict.fromkeys(clicks)))


def create_app(data_dir: Path) -> FastAPI:
    state = ServiceState(Path(data_dir))
    app = FastAPI(title="dragdrop annotation service", version="1")
    app.state.service = state

    def get_volume(volume_id: str) -> Volume:
        vol = state.volumes.get(volume_id)
        if vol is None:
            raise HTTPException(404, f"unknown volume {volume_id}")
        return vol

    def get_session(session_id: str) -> _Session:
        sess = state.sessions.get(session_id)
        if sess is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return sess

    def writer(sess: _Session):
        if not sess.lock.acquire(blocking=False):
            raise HTTPException(409, "session is busy (another writer or a "
                                     "propagation in progress)")
        if sess.state == "propagating":
            sess.lock.release()
            raise HTTPException(409, "propagation in progress")
        return sess.lock

    def register_volume(vol: Volume) -> VolumeInfo:
        volume_id = uuid.uuid4().hex[:12]
        state.volumes[volume_id] = vol
        volio.save_volume(vol, state.data_dir / "volumes" / f"{volume_id}.f32",
                          format="raw_json")
        return VolumeInfo(volume_id=volume_id, dims=vol.dims, spacing=vol.spacing)

    @app.post("/v1/volumes", response_model=VolumeInfo)
    async def upload_volume(request: Request,
                            format: str = Query("nifti1")) -> VolumeInfo:
        body = await request.body()
        if not body:
            raise HTTPException(422, "empty volume upload")
        suffix = ".nii.gz" if body[:2] == b"\x1f\x8b" else ".nii"
        tmp = state.data_dir / "volumes" / f"upload-{uuid.uuid4().hex}{suffix}"
        tmp.write_bytes(body)
        try:
            vol = load_volume(tmp, format=format)
        except VolumeIOError as e:
            tmp.unlink(missing_ok=True)
            raise HTTPException(422, str(e)) from e
        finally:
            tmp.unlink(missing_ok=True)
        return register_volume(vol)

    @app.post("/v1/volumes/from-path", response_model=VolumeInfo)
    def volume_from_path(req: FromPathRequest) -> VolumeInfo:
        try:
            vol = load_volume(req.path, format=req.format)
        except (VolumeIOError, FileNotFoundError) as e:
            raise HTTPException(422, str(e)) from e
        return register_volume(vol)

    @app.get("/v1/volumes/{volume_id}")
    def volume_info(volume_id: str) -> VolumeInfo:
        vol = get_volume(volume_id)
        return VolumeInfo(volume_id=volume_id, dims=vol.dims, spacing=vol.spacing)

    @app.get("/v1/volumes/{volume_id}/slice")
    def volume_slice(volume_id: str, axis: str = "z", index: int = 0,
                     lo: float = 0.0, hi: float = 255.0) -> Response:
        vol = get_volume(volume_id)
        if axis not in ("x", "y", "z"):
            raise HTTPException(422, f"bad axis {axis!r}")
        try:
            img = render_slice(vol, axis, index, (lo, hi))
        except (IndexError, ValueError) as e:
            raise HTTPException(422, str(e)) from e
        buf = io.BytesIO()
        Image.fromarray(img.T).save(buf, format="PNG")  # width = first axis
        return Response(buf.getvalue(), media_type="image/png")

    @app.post("/v1/sessions", response_model=CreateSessionResponse)
    def create_session(req: CreateSessionRequest) -> CreateSessionResponse:
        get_volume(req.volume_id)
        try:
            cfg = PropagationConfig(**req.config)
        except (TypeError, ValueError) as e:
            raise HTTPException(422, f"bad config: {e}") from e
        session_id = uuid.uuid4().hex[:12]
        sess = _Session(session_id, req.volume_id, cfg)
        sess.log.append({"op": "config", "config": asdict(cfg)})
        state.sessions[session_id] = sess
        state.persist_log(sess)
        return CreateSessionResponse(session_id=session_id)

    @app.post("/v1/sessions/{session_id}/annotations",
              response_model=AnnotationResponse)
    def add_annotation(session_id: str, req: AnnotationRequest) -> AnnotationResponse:
        sess = get_session(session_id)
        vol = get_volume(sess.volume_id)
        lock = writer(sess)
        try:
            warnings = []
            spacing = np.asarray(vol.spacing)
            c = np.asarray(req.center_mm) / spacing
            if np.any(c < 0) or np.any(c > np.asarray(vol.dims) - 1):
                raise HTTPException(422, "annotation center outside the volume")
            extent = np.asarray(vol.dims) * spacing
            if np.any(np.asarray(req.center_mm) - req.radius_mm < 0) or np.any(
                np.asarray(req.center_mm) + req.radius_mm > extent
            ):
                warnings.append(
                    "annotated sphere extends beyond the volume; background "
                    "markers will be clipped and the lesion may not be "
                    "fully encompassed"
                )
            lesion_id = req.lesion_id or sess.next_lesion_id
            sess.next_lesion_id = max(sess.next_lesion_id, lesion_id) + 1
            ann = DragDropAnnotation(
                center_mm=tuple(req.center_mm),
                radius_mm=req.radius_mm,
                class_id=req.class_id,
                lesion_id=lesion_id,
            )
            sess.annotations.append(ann)
            sess.log.append({
                "op": "annotation",
                "annotation": {
                    "center_mm": list(ann.center_mm),
                    "radius_mm": ann.radius_mm,
                    "class_id": ann.class_id,
                    "lesion_id": ann.lesion_id,
                },
            })
            state.persist_log(sess)
            return AnnotationResponse(lesion_id=lesion_id, warnings=warnings)
        finally:
            lock.release()

    def _run_propagation(sess: _Session, vol: Volume):
        try:
            sess.label = _propagate_full(
                vol, sess.annotations, sess.config,
                tuple(dict.fromkeys(sess.clicks)),
            )
            sess.state = "done"
        except Exception as e:  # surfaced via the status endpoint
            sess.state = "error"
            sess.error = str(e)
        finally:
            sess.lock.release()

    @app.post("/v1/sessions/{session_id}/propagate", status_code=202)
    def start_propagation(session_id: str) -> StatusResponse:
        sess = get_session(session_id)
        vol = get_volume(sess.volume_id)
        if not sess.annotations:
            raise HTTPException(422, "propagate requires at least one annotation")
        writer(sess)  # acquired; released by the worker thread
        sess.state = "propagating"
        sess.error = None
        sess.log.append({"op": "propagate"})
        state.persist_log(sess)
        threading.Thread(target=_run_propagation, args=(sess, vol),
                         daemon=True).start()
        return StatusResponse(state="propagating")

    @app.get("/v1/sessions/{session_id}/status")
    def status(session_id: str) -> StatusResponse:
        sess = get_session(session_id)
        return StatusResponse(state=sess.state, error=sess.error)

    @app.get("/v1/sessions/{session_id}/summary")
    def summary(session_id: str) -> SummaryResponse:
        sess = get_session(session_id)
        fg = unc = None
        if sess.label is not None:
            fg = int(np.count_nonzero(sess.label.foreground))
            unc = int(np.count_nonzero(sess.label.uncertain))
        return SummaryResponse(
            state=sess.state,
            annotation_count=len(sess.annotations),
            foreground_voxels=fg,
            uncertain_voxels=unc,
            config=asdict(sess.config),
        )

    @app.get("/v1/sessions/{session_id}/label")
    def label_slice(session_id: str, axis: str = "z", index: int = 0) -> Response:
        sess = get_session(session_id)
        if sess.label is None:
            raise HTTPException(404, "no label yet: run propagate first")
        vol = get_volume(sess.volume_id)
        overlay = np.zeros(vol.dims, dtype=np.float32)
        overlay[sess.label.uncertain] = 128
        overlay[sess.label.foreground] = 255
        try:
            img = render_slice(Volume(overlay, vol.spacing), axis, index,
                               (0.0, 255.0))
        except (IndexError, ValueError, KeyError) as e:
            raise HTTPException(422, str(e)) from e
        buf = io.BytesIO()
        Image.fromarray(img.T).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.post("/v1/sessions/{session_id}/refine")
    def refine_session(session_id: str, req: RefineRequest) -> SummaryResponse:
        sess = get_session(session_id)
        vol = get_volume(sess.volume_id)
        lock = writer(sess)
        try:
            clicks = []
            for c in req.clicks:
                if c.polarity not in ("foreground", "background"):
                    raise HTTPException(422, f"bad polarity {c.polarity!r}")
                if any(not 0 <= c.voxel[a] < vol.dims[a] for a in range(3)):
                    raise HTTPException(422, f"click {c.voxel} outside volume")
                clicks.append(RefinementClick(tuple(c.voxel), c.polarity))
            if clicks:
                sess.clicks.extend(clicks)
                sess.log.append({
                    "op": "refine",
                    "clicks": [
                        {"voxel": list(c.voxel), "polarity": c.polarity}
                        for c in clicks
                    ],
                })
                state.persist_log(sess)
                try:
                    sess.label = _propagate_full(
                        vol, sess.annotations, sess.config,
                        tuple(dict.fromkeys(sess.clicks)),
                    )
                except PropagationError as e:
                    raise HTTPException(422, str(e)) from e
            return summary(session_id)
        finally:
            lock.release()

    @app.get("/v1/sessions/{session_id}/export")
    def export(session_id: str, part: str = Query("foreground")) -> Response:
        sess = get_session(session_id)
        if sess.label is None:
            raise HTTPException(404, "no label yet: run propagate first")
        if part == "foreground":
            arr = sess.label.class_labels
        elif part == "uncertain":
            arr = sess.label.uncertain.astype(np.int32)
        else:
            raise HTTPException(422, f"unknown export part {part!r}")
        import tempfile

        with tempfile.NamedTemporaryFile(suffix=".nii") as tmp:
            volio.save_label(LabelVolume(arr, sess.label.spacing), tmp.name,
                             format="nifti1")
            data = Path(tmp.name).read_bytes()
        return Response(
            data,
            media_type="application/octet-stream",
            headers={"Content-Disposition":
                     f'attachment; filename="{part}.nii"'},
        )

    @app.get("/v1/sessions/{session_id}/log")
    def get_log(session_id: str):
        sess = get_session(session_id)
        return {"session_id": sess.id, "volume_id": sess.volume_id,
                "log": sess.log}

    return app
