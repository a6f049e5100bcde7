"""HTTP facade for the placement UI.

Serves cached views (full size and thumbnails with ETags), validates click
selections into boxes, and runs optimization jobs on a single background
worker with a FIFO queue.  Job state follows the pending / running /
completed / failed / cancelled machine; cancellation of a finished job is a
409 conflict, unknown ids are 404.  CORS is open so a dev-server frontend
can talk to it directly.
"""

from __future__ import annotations

import hashlib
import io
import itertools
import json
import queue
import threading
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .errors import (ConfigError, DegenerateSelectionError,
                     SceneGenError, ValidationError)
from .geometry import (ClickSelection, box_from_text, box_to_text, build_box,
                       project, project_box_mask)
from .scene_cache import SceneCache, load_cache
from .trainer import JobState, TrainConfig, train

MAX_THUMB = 128


@dataclass
class Job:
    job_id: str
    prompt: str
    box_text: str
    config: TrainConfig
    out_dir: Path
    state: str = JobState.PENDING
    step: int = 0
    error: str | None = None
    records: list = dc_field(default_factory=list)
    cancel_event: threading.Event = dc_field(default_factory=threading.Event)
    field_model: object = None
    lock: threading.Lock = dc_field(default_factory=threading.Lock)

    def transition(self, new: str):
        with self.lock:
            JobState.check(self.state, new)
            self.state = new

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "job_id": self.job_id,
                "state": self.state,
                "prompt": self.prompt,
                "step": self.step,
                "total_steps": self.config.total_steps,
                "error": self.error,
                "last_record": self.records[-1] if self.records else None,
            }


class JobRunner:
    """Single worker thread draining a FIFO queue of jobs."""

    def __init__(self, cache: SceneCache, provider_factory, jobs_root: Path):
        self.cache = cache
        self.provider_factory = provider_factory
        self.jobs_root = Path(jobs_root)
        self.jobs: dict[str, Job] = {}
        self.queue: "queue.Queue[str]" = queue.Queue()
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._thread = threading.Thread(target=self._worker, daemon=True)
        self._thread.start()

    def submit(self, prompt: str, box_text: str, cfg: TrainConfig) -> Job:
        with self._lock:
            job_id = f"job{next(self._ids):04d}"
        job = Job(job_id, prompt, box_text, cfg,
                  self.jobs_root / job_id)
        self.jobs[job_id] = job
        self.queue.put(job_id)
        return job

    def get(self, job_id: str) -> Job | None:
        return self.jobs.get(job_id)

    def cancel(self, job: Job) -> bool:
        """True if the cancellation was accepted."""
        with job.lock:
            if job.state in (JobState.COMPLETED, JobState.FAILED,
                             JobState.CANCELLED):
                return False
        job.cancel_event.set()
        # Pending jobs are cancelled immediately; running ones at the next
        # step boundary via should_stop.
        with job.lock:
            if job.state == JobState.PENDING:
                JobState.check(job.state, JobState.CANCELLED)
                job.state = JobState.CANCELLED
        return True

    def _worker(self):
        while True:
            job_id = self.queue.get()
            job = self.jobs[job_id]
            if job.state == JobState.CANCELLED:
                continue
            try:
                job.transition(JobState.RUNNING)
            except ValidationError:
                continue
            try:
                self._run(job)
            except SceneGenError as exc:
                with job.lock:
                    job.error = str(exc)
                job.transition(JobState.FAILED)
            except Exception as exc:   # noqa: BLE001 - jobs must not kill the worker
                with job.lock:
                    job.error = f"{type(exc).__name__}: {exc}"
                job.transition(JobState.FAILED)

    def _run(self, job: Job):
        box = box_from_text(job.box_text)
        provider = self.provider_factory(job.config)

        def progress(step, record):
            with job.lock:
                job.step = step + 1
                job.records.append(record)
                if len(job.records) > 5000:
                    del job.records[:1000]

        result = train(self.cache, box, provider, job.config, job.out_dir,
                       progress=progress,
                       should_stop=job.cancel_event.is_set)
        with job.lock:
            job.field_model = result.field
        job.transition(JobState.CANCELLED if result.status == "cancelled"
                       else JobState.COMPLETED)


# ---------------------------------------------------------------------------
# App
# ---------------------------------------------------------------------------

def _png_bytes(array: np.ndarray) -> bytes:
    quant = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quant).save(buf, format="PNG")
    return buf.getvalue()


def create_app(scene, provider_spec=None, provider_factory=None,
               jobs_root="jobs", config_defaults: dict | None = None):
    """Build the FastAPI app.

    ``scene`` is a cache directory or a SceneCache.  Providers come either
    from ``provider_factory(cfg)`` (tests inject oracles here) or from a
    CLI-style ``provider_spec`` string.
    """
    cache = scene if isinstance(scene, SceneCache) else load_cache(scene)
    if provider_factory is None:
        if provider_spec is None:
            raise ValidationError("a provider spec or factory is required")
        from .cli import make_provider
        provider_factory = lambda cfg: make_provider(provider_spec, cfg)  # noqa: E731

    runner = JobRunner(cache, provider_factory, Path(jobs_root))
    defaults = dict(config_defaults or {})

    app = FastAPI(title="scenegen service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.cache = cache
    app.state.runner = runner

    @app.exception_handler(ValidationError)
    async def _validation_handler(request: Request, exc: ValidationError):
        status = 422 if isinstance(exc, DegenerateSelectionError) else 400
        return JSONResponse(status_code=status,
                            content={"error": str(exc),
                                     "type": type(exc).__name__})

    # -- scene -------------------------------------------------------------

    @app.get("/views")
    def views():
        return {
            "world_scale": cache.world_scale,
            "views": [{
                "view_id": v.view_id,
                "width": v.camera.width,
                "height": v.camera.height,
                "intrinsics": [float(x) for x in
                               v.camera.intrinsics.flatten()],
                "cam_to_world": [float(x) for x in
                                 v.camera.cam_to_world.flatten()],
            } for v in cache.views],
        }

    def _view_or_404(view_id: int):
        try:
            return cache.view(view_id)
        except KeyError:
            raise HTTPException(404, f"no view {view_id}")

    def _etag_response(request: Request, data: bytes) -> Response:
        tag = '"' + hashlib.sha1(data).hexdigest()[:16] + '"'
        if request.headers.get("if-none-match") == tag:
            return Response(status_code=304, headers={"ETag": tag})
        return Response(content=data, media_type="image/png",
                        headers={"ETag": tag})

    @app.get("/views/{view_id}/color.png")
    def view_color(view_id: int, request: Request):
        view = _view_or_404(view_id)
        return _etag_response(request, _png_bytes(view.color))

    @app.get("/views/{view_id}/thumb.png")
    def view_thumb(view_id: int, request: Request, size: int = MAX_THUMB):
        view = _view_or_404(view_id)
        size = min(max(size, 8), MAX_THUMB)
        h, w = view.color.shape[:2]
        stride = max(1, -(-max(h, w) // size))   # ceil division
        thumb = view.color[::stride, ::stride]   # nearest, no smoothing
        return _etag_response(request, _png_bytes(thumb))

    # -- placement ---------------------------------------------------------

    @app.post("/place")
    def place(body: dict):
        try:
            view = _view_or_404(int(body["view_id"]))
            sel = ClickSelection(view.view_id,
                                 tuple((float(u), float(v))
                                       for u, v in body["clicks"]),
                                 tuple(float(k)
                                       for k in body["size_ratios"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(400, f"malformed placement request: {exc}")
        box = build_box(sel, view.camera, view.depth_lookup)
        masks = {}
        projections = {}
        for v in cache.views:
            m = project_box_mask(box, v.camera)
            ys, xs = np.nonzero(m)
            masks[str(v.view_id)] = {
                "pixels": int(m.sum()),
                "bbox": [int(xs.min()), int(ys.min()),
                         int(xs.max()), int(ys.max())] if m.any() else None,
            }
            # [u, v, camera depth] per corner; depth <= 0 means behind the
            # camera, so overlay clients drop edges touching that corner.
            projections[str(v.view_id)] = [
                [float(uv[0]), float(uv[1]), z]
                for uv, z in (project(v.camera, c) for c in box.corners)]
        return {
            "box": box_to_text(box),
            "center": [float(c) for c in box.center],
            "half_extents": [float(h) for h in box.half_extents],
            "axes": [[float(x) for x in col]
                     for col in box.axes.T],
            "corners": [[float(x) for x in c] for c in box.corners],
            "projections": projections,
            "visibility": masks,
        }

    # -- jobs --------------------------------------------------------------

    @app.post("/jobs", status_code=201)
    def create_job(body: dict):
        try:
            prompt = str(body["prompt"])
            box_text = str(body["box"])
            overrides = dict(defaults)
            overrides.update(body.get("config", {}))
            overrides["prompt"] = prompt
            cfg = TrainConfig.from_dict(overrides)
        except (KeyError, TypeError, ConfigError) as exc:
            raise HTTPException(400, f"malformed job request: {exc}")
        box_from_text(box_text)   # validate before queueing
        job = runner.submit(prompt, box_text, cfg)
        return job.snapshot()

    def _job_or_404(job_id: str) -> Job:
        job = runner.get(job_id)
        if job is None:
            raise HTTPException(404, f"no job {job_id}")
        return job

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        return _job_or_404(job_id).snapshot()

    @app.post("/jobs/{job_id}/cancel")
    def cancel_job(job_id: str):
        job = _job_or_404(job_id)
        if not runner.cancel(job):
            raise HTTPException(
                409, f"job {job_id} already {job.state}")
        return job.snapshot()

    @app.get("/jobs/{job_id}/losses")
    def job_losses(job_id: str, tail: int = 200):
        job = _job_or_404(job_id)
        with job.lock:
            records = job.records[-tail:]
        return {"job_id": job_id, "records": records}

    @app.get("/jobs/{job_id}/render")
    def job_render(job_id: str, view: int, samples: int = 32):
        from .compositor import render_view as rv
        job = _job_or_404(job_id)
        scene_view = _view_or_404(view)
        with job.lock:
            model = job.field_model
        if model is None:
            ckpt = job.out_dir / "field.ckpt"
            if not ckpt.exists():
                raise HTTPException(
                    409, f"job {job_id} has no renderable state yet")
            from .field import load_checkpoint
            model, _ = load_checkpoint(ckpt)
        with torch.no_grad():
            out = rv(model, scene_view, n_samples=samples)
        return Response(content=_png_bytes(out.image.numpy()),
                        media_type="image/png")

    return app
