"""HTTP annotation service.

Thin, stateless-client surface over a LoopRunner: annotators lease queue
items, submit label sets (empty = N/A), and explicitly advance iterations
once a batch is complete.  All authority lives in the run directory's event
log and checkpoints; the browser holds nothing.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .aggregate import write_dds, write_provenance
from .annotation import AnnotationError, round_stats
from .corpus import EntityPairKey, document_to_record
from .loop import LoopRunner, StopDecision, should_stop


class AnnotationIn(BaseModel):
    title: str
    h_idx: int
    t_idx: int
    labels: list[str] = Field(default_factory=list)
    annotator: str = "anonymous"


class ServiceState:
    """Runner plus the run-level lock every write funnels through."""

    def __init__(self, runner: LoopRunner, run_id: str = "", token: str | None = None):
        self.runner = runner
        self.run_id = run_id
        self.token = token
        self.lock = threading.Lock()
        self.terminal_reason: str | None = None
        self.dds_labels: int | None = None
        if runner.state is None:
            raise ValueError("serve requires a pretrained or restored loop state")
        self._settle()

    # -- lifecycle --

    def _settle(self) -> None:
        """Sample the next batch, or finish the run when the loop is done."""
        runner = self.runner
        decision = should_stop(runner.state, runner.cfg)
        if decision is not StopDecision.CONTINUE:
            self._finish(decision.value)
            return
        batch = runner.sample_next_batch(runner.state)
        if not batch.items and len(runner.manager.queue) == 0:
            self._finish("no_candidates")

    def _finish(self, reason: str) -> None:
        if self.terminal_reason is not None:
            return
        dds = self.runner.aggregate_output(self.runner.state)
        self.dds_labels = dds.num_labels()
        if self.runner.run_dir is not None:
            write_dds(dds, self.runner.ds, Path(self.runner.run_dir) / "dds.json")
            write_provenance(dds, Path(self.runner.run_dir) / "provenance.jsonl")
        self.terminal_reason = reason

    @property
    def phase(self) -> str:
        if self.terminal_reason is not None:
            return "terminal"
        if len(self.runner.manager.queue) > 0:
            return "annotating"
        return "ready_to_advance"

    # -- views --

    def status(self) -> dict:
        runner = self.runner
        state = runner.state
        stats = round_stats(runner.manager.pool, runner.cfg.sampler.long_tail)
        queue = runner.manager.queue
        now = queue._clock()
        leased = sum(1 for k in queue.pending_keys() if queue.is_leased(k))
        return {
            "run_id": self.run_id,
            "iteration": state.iteration,
            "budget_used": runner.manager.pool.budget_used,
            "budget": runner.cfg.budget,
            "mean_disagreement": state.mean_disagreement,
            "mean_history": state.mean_history,
            "round_stats": {
                "per_iteration": {str(k): v for k, v in stats.per_iteration.items()},
                "totals": stats.totals,
            },
            "queue": {"pending": len(queue), "leased": leased},
            "phase": self.phase,
            "stop_reason": self.terminal_reason,
            "dds_labels": self.dds_labels,
        }

    def item_view(self, item) -> dict:
        runner = self.runner
        doc = runner.ds.get(item.key.doc_id)
        schema = runner.ds.schema
        long_tail = runner.cfg.sampler.long_tail
        return {
            "title": item.key.doc_id,
            "h_idx": item.key.head_idx,
            "t_idx": item.key.tail_idx,
            "iteration": item.iteration,
            "score": item.score,
            "document": document_to_record(doc),
            "predictions": {m: list(rs) for m, rs in item.model_predictions.items()},
            "relations": [
                {"id": r, "display": schema.display(r), "long_tail": r in long_tail}
                for r in schema.relations
            ],
        }


def make_app(service: ServiceState, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="annotation console api")

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def authorized(request: Request) -> None:
        if service.token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {service.token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    @app.get("/api/status")
    def get_status(_: None = Depends(authorized)):
        with service.lock:
            return service.status()

    @app.get("/api/queue/next")
    def lease_next(_: None = Depends(authorized)):
        with service.lock:
            item = service.runner.manager.queue.lease_next()
            if item is None:
                return {"item": None, "status": service.status()}
            return {"item": service.item_view(item), "status": service.status()}

    @app.post("/api/annotations")
    def submit(body: AnnotationIn, _: None = Depends(authorized)):
        pair = EntityPairKey(body.title, body.h_idx, body.t_idx)
        with service.lock:
            queue = service.runner.manager.queue
            if queue.get(pair) is None or not queue.is_leased(pair):
                raise HTTPException(status_code=409, detail="pair is not leased")
            try:
                service.runner.manager.submit(
                    pair, body.labels, body.annotator, service.runner.ds.schema
                )
            except AnnotationError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            return {"ok": True, "status": service.status()}

    @app.post("/api/iterations/advance")
    def advance(_: None = Depends(authorized)):
        with service.lock:
            if service.terminal_reason is not None:
                raise HTTPException(status_code=409, detail="run already complete")
            pending = service.runner.manager.queue.pending_keys()
            if pending:
                raise HTTPException(
                    status_code=409,
                    detail={"message": "batch not fully annotated", "pending": len(pending)},
                )
            service.runner.advance(service.runner.state)
            service._settle()
            return service.status()

    @app.get("/api/docs/{doc_id}")
    def get_document(doc_id: str, _: None = Depends(authorized)):
        doc = service.runner.ds.get(doc_id)
        if doc is None:
            raise HTTPException(status_code=404, detail=f"unknown document {doc_id!r}")
        return document_to_record(doc)

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="console")
    return app


def drive_with_client(client, answer_fn, annotator: str = "scripted") -> dict:
    """Run a whole serve-mode session through the HTTP surface.

    answer_fn maps a leased item view to its label list; used by tests and
    by offline scripted annotation against a live service.
    """
    while True:
        status = client.get("/api/status").json()
        if status["phase"] == "terminal":
            return status
        leased = []
        while True:
            payload = client.get("/api/queue/next").json()
            if payload["item"] is None:
                break
            leased.append(payload["item"])
        for item in leased:
            response = client.post(
                "/api/annotations",
                json={
                    "title": item["title"],
                    "h_idx": item["h_idx"],
                    "t_idx": item["t_idx"],
                    "labels": answer_fn(item),
                    "annotator": annotator,
                },
            )
            response.raise_for_status()
        client.post("/api/iterations/advance").raise_for_status()
