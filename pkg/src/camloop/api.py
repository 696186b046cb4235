"""HTTP service for the labeling loop.

A thin JSON layer over ProjectSession. One process serves one project
directory. Writes (label submissions, retrain triggers) funnel through a
single lock and are rejected with 409 while a retrain runs on the
background thread; reads serve consistent snapshots and never wait for
training. Every successful mutation is persisted to disk before the
response goes out.
"""
from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .detections import read_crop_manifest
from .errors import DataError
from .project import ProjectState
from .session import InvalidLabels, ProjectSession

API_PREFIX = "/api/v1"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details: list | None = None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details or []
        super().__init__(message)


class LabelRow(BaseModel):
    crop_id: str
    species: str


class LabelSubmission(BaseModel):
    labels: list[LabelRow] = Field(default_factory=list)
    labeler: str = "human"


class ServiceRuntime:
    """Shared state behind the endpoints.

    Concurrency model: one writer at a time. `lock` serializes mutations;
    the `training` flag additionally excludes them for the whole background
    retrain (submissions during training get 409, they are not queued).
    Readers take a snapshot of the session state reference — state objects
    are immutable and swapped atomically — so training never blocks reads.
    """

    def __init__(self, project_dir: Path):
        self.project_dir = Path(project_dir)
        self.lock = threading.Lock()
        self.training = threading.Event()
        self.last_training_error: str | None = None
        self._session: ProjectSession | None = None
        self._crop_paths: dict[str, Path] | None = None

    def session(self) -> ProjectSession:
        if self._session is None:
            if not (self.project_dir / "project.json").exists():
                raise ApiError(404, "no_project",
                               f"no active project in {self.project_dir} (run init-project first)")
            try:
                self._session = ProjectSession(self.project_dir)
            except DataError as exc:
                raise ApiError(500, "project_error", str(exc)) from exc
        return self._session

    def snapshot(self) -> ProjectState:
        return self.session().state

    def status(self) -> dict:
        if self.training.is_set():
            return {"state": "training", "message": None}
        if self.last_training_error is not None:
            return {"state": "error", "message": self.last_training_error}
        return {"state": "idle", "message": None}

    def crop_path(self, crop_id: str) -> Path | None:
        if self._crop_paths is None:
            paths: dict[str, Path] = {}
            manifest = self.project_dir / self.snapshot().crop_manifest_path
            if manifest.exists():
                for rec in read_crop_manifest(manifest):
                    paths[rec.crop_id] = manifest.parent / rec.crop_path
            self._crop_paths = paths
        return self._crop_paths.get(crop_id)

    def start_retrain(self) -> None:
        """Caller must hold `lock` and have checked `training` is clear."""
        self.training.set()
        threading.Thread(target=self._retrain_worker, name="camloop-retrain", daemon=True).start()

    def _retrain_worker(self) -> None:
        try:
            # Safe without the lock: `training` keeps every other writer out,
            # and complete_round publishes its result as one atomic swap.
            self.session().complete_round()
            self.last_training_error = None
        except Exception as exc:  # surfaced via status, never crashes the service
            self.last_training_error = str(exc)
        finally:
            self.training.clear()


def session_view(runtime: ServiceRuntime, state: ProjectState) -> dict:
    batch = state.current_batch
    pending = runtime.session().pending_items(state)
    return {
        "round": batch.round if batch else state.pool.round,
        "strategy": state.pool.strategy,
        "pending": [
            {"crop_id": it.crop_id, "score": it.score, "probs": list(it.probs),
             "crop_url": f"{API_PREFIX}/crops/{it.crop_id}"}
            for it in pending
        ],
        "batch_size": len(batch.items) if batch else 0,
        "counts": {
            "labeled": len(state.pool.labeled),
            "unlabeled": len(state.pool.unlabeled),
            "budget": state.pool.label_budget,
        },
        "class_names": state.class_names,
        "status": runtime.status(),
        "exhausted": batch is None,
    }


def create_app(project_dir: Path, frontend_dir: Path | None = None) -> FastAPI:
    runtime = ServiceRuntime(Path(project_dir))
    app = FastAPI(title="camloop", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.runtime = runtime

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message, "details": exc.details})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        details = [{"field": ".".join(str(p) for p in e.get("loc", [])), "reason": e.get("msg", "")}
                   for e in exc.errors()]
        return JSONResponse(status_code=422,
                            content={"code": "invalid_request", "message": "request body failed validation",
                                     "details": details})

    @app.get(API_PREFIX + "/project")
    def get_project():
        state = runtime.snapshot()
        return {
            "project_id": state.project_id,
            "class_names": state.class_names,
            "strategy": state.pool.strategy,
            "round": state.pool.round,
            "labels_used": state.pool.labels_used,
            "label_budget": state.pool.label_budget,
            "pool_size": len(state.pool.unlabeled) + len(state.pool.labeled),
            "validation_size": len(state.validation),
            "rounds_completed": len(state.history),
            "status": runtime.status(),
        }

    @app.get(API_PREFIX + "/batch")
    def get_batch():
        if runtime.training.is_set():
            raise ApiError(409, "training", "retraining in progress; poll until idle",
                           details=[{"status": "training"}])
        return session_view(runtime, runtime.snapshot())

    @app.post(API_PREFIX + "/labels")
    def post_labels(submission: LabelSubmission):
        with runtime.lock:
            if runtime.training.is_set():
                raise ApiError(409, "training", "retraining in progress; labels are not queued",
                               details=[{"status": "training"}])
            session = runtime.session()
            pairs = [(row.crop_id, row.species) for row in submission.labels]
            try:
                complete = session.apply_label_batch(pairs, labeler=submission.labeler)
            except InvalidLabels as exc:
                raise ApiError(422, "invalid_labels", "one or more label rows were rejected",
                               details=exc.rows) from exc
            if complete:
                runtime.start_retrain()
            return session_view(runtime, session.state)

    @app.post(API_PREFIX + "/retrain")
    def post_retrain():
        with runtime.lock:
            if runtime.training.is_set():
                raise ApiError(409, "training", "a retrain is already in progress",
                               details=[{"status": "training"}])
            session = runtime.session()
            if not session.state.pool.labeled:
                raise ApiError(409, "no_labels", "nothing labeled yet; label the first batch before retraining")
            runtime.start_retrain()
        return JSONResponse(status_code=202, content={"status": {"state": "training", "message": None}})

    @app.get(API_PREFIX + "/metrics")
    def get_metrics():
        session = runtime.session()
        state = session.state
        if not state.history:
            raise ApiError(404, "no_rounds", "no completed rounds yet; metrics appear after the first retrain")
        latest = state.history[-1]
        payload = session.round_metrics(latest)
        curve = session.learning_curve(state)
        return {
            "round": latest.round,
            "labels_used": latest.labels_used,
            "report": payload["report"],
            "confusion": payload["confusion"],
            "curve": [{"labels_used": p.labels_used, "accuracy": p.accuracy,
                       "macro_precision": p.macro_precision, "macro_recall": p.macro_recall,
                       "macro_f1": p.macro_f1} for p in curve.points],
        }

    @app.get(API_PREFIX + "/crops/{crop_id}")
    def get_crop(crop_id: str):
        path = runtime.crop_path(crop_id)
        if path is None or not path.exists():
            raise ApiError(404, "unknown_crop", f"no crop image for id {crop_id!r}")
        return FileResponse(path, media_type="image/png",
                            headers={"Cache-Control": "public, max-age=31536000, immutable"})

    static_dir = Path(frontend_dir) if frontend_dir is not None else None
    if static_dir and static_dir.is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
