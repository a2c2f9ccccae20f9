"""HTTP annotation service backing the human oracle and the browser UI.

Annotators receive pending sentences from ``GET /batch`` (leased so two
concurrent pollers never see the same task), mark word boundaries, and post
them to ``POST /labels``; the server converts boundary offsets to BMES tags,
which is the only place tags are ever constructed. ``GET /status`` and
``GET /curves`` expose loop progress. All responses are JSON with an
explicit schema version.
"""

from __future__ import annotations

import dataclasses
import threading
import time
from dataclasses import dataclass, field

from pydantic import BaseModel

from .corpus import CorpusFormatError, Sentence, boundaries_to_tags

SCHEMA_VERSION = 1


class LabelSubmission(BaseModel):
    task_id: int
    boundaries: list[int]


class UnknownTaskError(KeyError):
    pass


class AlreadySubmittedError(ValueError):
    pass


@dataclass
class AnnotationTask:
    task_id: int
    sentence_id: int
    chars: str
    iteration: int
    status: str = "pending"  # pending | submitted
    tags: str | None = None
    boundaries: list[int] | None = None
    lease_until: float = 0.0


class AnnotationQueue:
    """Thread-safe task store; all mutations pass through one lock."""

    def __init__(self, lease_seconds: float = 300.0):
        self._lock = threading.Lock()
        self._tasks: dict[int, AnnotationTask] = {}
        self._next_id = 1
        self.lease_seconds = lease_seconds

    def put(self, sentences: list[Sentence], iteration: int) -> list[int]:
        with self._lock:
            ids = []
            for s in sentences:
                task = AnnotationTask(
                    task_id=self._next_id,
                    sentence_id=s.id,
                    chars=s.chars,
                    iteration=iteration,
                )
                self._tasks[task.task_id] = task
                ids.append(task.task_id)
                self._next_id += 1
            return ids

    def lease_batch(self, k: int, now: float | None = None) -> list[AnnotationTask]:
        """Up to k pending tasks whose lease has expired; leases renew so a
        second poller inside the window sees different tasks."""
        now = time.time() if now is None else now
        with self._lock:
            out = []
            for task in self._tasks.values():
                if task.status == "pending" and task.lease_until <= now:
                    task.lease_until = now + self.lease_seconds
                    out.append(dataclasses.replace(task))
                    if len(out) == k:
                        break
            return out

    def submit(self, task_id: int, boundaries: list[int]) -> str:
        """Validate and store an annotation; returns the BMES tags."""
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(f"no task {task_id}")
            if task.status == "submitted":
                raise AlreadySubmittedError(f"task {task_id} already submitted")
            if any(b2 <= b1 for b1, b2 in zip(boundaries, boundaries[1:])):
                raise CorpusFormatError("boundaries must be strictly increasing")
            tags = boundaries_to_tags(len(task.chars), list(boundaries))
            task.tags = tags
            task.boundaries = list(boundaries)
            task.status = "submitted"
            return tags

    def pending_count(self, iteration: int | None = None) -> int:
        with self._lock:
            return sum(
                1
                for t in self._tasks.values()
                if t.status == "pending"
                and (iteration is None or t.iteration == iteration)
            )

    def counts(self) -> tuple[int, int]:
        with self._lock:
            pending = sum(1 for t in self._tasks.values() if t.status == "pending")
            return pending, len(self._tasks) - pending

    def collect(self, iteration: int) -> dict[int, str]:
        """sentence_id -> tags for submitted tasks of one iteration."""
        with self._lock:
            return {
                t.sentence_id: t.tags
                for t in self._tasks.values()
                if t.iteration == iteration and t.status == "submitted"
            }

    def get(self, task_id: int) -> AnnotationTask | None:
        with self._lock:
            t = self._tasks.get(task_id)
            return dataclasses.replace(t) if t else None


@dataclass
class LoopStatus:
    """Snapshot of the loop shared between the AL thread and the service."""

    phase: str = "starting"
    iteration: int = 0
    train_size: int = 0
    test_f1: float | None = None
    history: list[dict] = field(default_factory=list)


class StatusBoard:
    def __init__(self):
        self._lock = threading.Lock()
        self._status = LoopStatus()

    def update(self, phase: str, state) -> None:
        with self._lock:
            self._status.phase = phase
            self._status.iteration = max(state.iteration, 0)
            if state.history:
                last = state.history[-1]
                self._status.train_size = last.train_size
                self._status.test_f1 = last.test_f1
            self._status.history = [dataclasses.asdict(r) for r in state.history]

    def snapshot(self) -> LoopStatus:
        with self._lock:
            return dataclasses.replace(
                self._status, history=[dict(r) for r in self._status.history]
            )


def build_app(queue: AnnotationQueue, board: StatusBoard, ui_dir: str | None = None):
    """FastAPI application over an annotation queue and a status board.
    When ``ui_dir`` exists, its static files are served under /ui."""
    from fastapi import FastAPI, Query
    from fastapi.responses import JSONResponse

    app = FastAPI(title="segmentation annotation service")

    @app.get("/batch")
    def get_batch(k: int = Query(default=10, ge=1, le=200)):
        tasks = queue.lease_batch(k)
        return {
            "version": SCHEMA_VERSION,
            "tasks": [
                {"task_id": t.task_id, "chars": t.chars, "iteration": t.iteration}
                for t in tasks
            ],
        }

    @app.post("/labels")
    def post_labels(body: LabelSubmission):
        try:
            tags = queue.submit(body.task_id, body.boundaries)
        except UnknownTaskError:
            return JSONResponse(
                status_code=404,
                content={"version": SCHEMA_VERSION, "detail": f"unknown task {body.task_id}"},
            )
        except AlreadySubmittedError:
            return JSONResponse(
                status_code=409,
                content={"version": SCHEMA_VERSION, "detail": "task already submitted"},
            )
        except CorpusFormatError as exc:
            return JSONResponse(
                status_code=422,
                content={"version": SCHEMA_VERSION, "detail": str(exc)},
            )
        return {
            "version": SCHEMA_VERSION,
            "task_id": body.task_id,
            "status": "submitted",
            "tags": tags,
        }

    @app.get("/status")
    def get_status():
        snap = board.snapshot()
        pending, submitted = queue.counts()
        return {
            "version": SCHEMA_VERSION,
            "phase": snap.phase,
            "iteration": snap.iteration,
            "pending": pending,
            "submitted": submitted,
            "train_size": snap.train_size,
            "test_f1": snap.test_f1,
        }

    @app.get("/curves")
    def get_curves():
        snap = board.snapshot()
        return {"version": SCHEMA_VERSION, "history": snap.history}

    if ui_dir:
        from pathlib import Path

        if Path(ui_dir).is_dir():
            from fastapi.staticfiles import StaticFiles

            app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve_run(app, port: int, stop_event: threading.Event | None = None):
    """Run uvicorn until the loop signals completion (or forever)."""
    import uvicorn

    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)
    if stop_event is None:
        server.run()
        return server
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    stop_event.wait()
    server.should_exit = True
    thread.join(timeout=10)
    return server
