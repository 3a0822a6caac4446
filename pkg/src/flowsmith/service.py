"""HTTP facade and filesystem persistence.

All state lives as canonical JSON documents under the workspace
directory (sessions/, flows/, plans/, jobs/, runs/, cassettes/), written
atomically, so a restarted process rehydrates everything. Generation and
execution run on background threads; clients poll jobs and runs.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .assembler import ReviewExhausted, assemble
from .config import Config, default_config
from .executor import InvalidFlow, run_flow, run_to_doc
from .flow_model import SchemaError, default_catalog, flow_from_doc, flow_to_doc, serialize, validate
from .gateway import GatewayError, LLMGateway, ProviderError
from .intent import (
    AgentUnavailable,
    ConversationState,
    FormAnswer,
    FormAnswers,
    advance,
    finalize,
    state_from_doc,
    state_to_doc,
)
from .planner import plan_to_doc

def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _safe_error(exc: Exception) -> str:
    """User-presentable error text; never raw provider bodies or credentials."""
    if isinstance(exc, ProviderError):
        return f"model provider rejected the request (status {exc.status})"
    if isinstance(exc, (AgentUnavailable, GatewayError)):
        return "the model gateway is unavailable; try again"
    return f"{type(exc).__name__}: {exc}"


class Workspace:
    """Atomic JSON document store rooted at one directory."""

    SUBDIRS = ("sessions", "flows", "plans", "jobs", "runs", "cassettes")

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        for sub in self.SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def path(self, kind: str, doc_id: str, suffix: str = ".json") -> Path:
        return self.root / kind / f"{doc_id}{suffix}"

    def write(self, kind: str, doc_id: str, doc: Any, suffix: str = ".json") -> None:
        path = self.path(kind, doc_id, suffix)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        os.replace(tmp, path)

    def write_bytes(self, kind: str, doc_id: str, data: bytes, suffix: str) -> None:
        path = self.path(kind, doc_id, suffix)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)

    def read(self, kind: str, doc_id: str, suffix: str = ".json") -> Any | None:
        path = self.path(kind, doc_id, suffix)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)


class FlowSmithService:
    """Session, job, flow, and run lifecycles over one Workspace."""

    def __init__(self, workspace: Workspace, config: Config, gateway: LLMGateway) -> None:
        self.workspace = workspace
        self.config = config
        self.gateway = gateway
        self.catalog = default_catalog()
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._cancelled: set[str] = set()

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    # -- sessions ----------------------------------------------------------

    def create_session(self) -> dict:
        session_id = f"session-{uuid.uuid4().hex[:12]}"
        doc = {
            "id": session_id,
            "created_at": _now(),
            "status": "chatting",
            "state": state_to_doc(ConversationState(session_id=session_id)),
            "turns": [],
            "flow_ids": [],
        }
        self.workspace.write("sessions", session_id, doc)
        return doc

    def get_session(self, session_id: str) -> dict:
        doc = self.workspace.read("sessions", session_id)
        if doc is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return doc

    def post_message(self, session_id: str, body: dict) -> dict:
        with self._session_lock(session_id):
            doc = self.get_session(session_id)
            if doc["status"] == "generating":
                raise HTTPException(status_code=409, detail="session is generating a flow")
            if body.get("answers") is not None:
                user_input: str | FormAnswers = FormAnswers(
                    answers=tuple(
                        FormAnswer(
                            question_id=a.get("question_id", ""),
                            question=a.get("question", ""),
                            answer=a.get("answer", ""),
                        )
                        for a in body["answers"]
                    )
                )
            else:
                text = (body.get("text") or "").strip()
                if not text:
                    raise HTTPException(status_code=422, detail="message body needs text or answers")
                user_input = text
            state = state_from_doc(doc["state"])
            try:
                state, turn = advance(state, user_input, self.gateway, self.config)
            except AgentUnavailable as exc:
                raise HTTPException(status_code=503, detail=_safe_error(exc)) from exc
            turn_doc = {
                "message": turn.message,
                "questions": [
                    {"id": q.id, "kind": q.kind, "text": q.text} for q in turn.form.questions
                ],
                "coverage_hint": turn.coverage_hint,
            }
            doc["state"] = state_to_doc(state)
            doc["turns"].append(turn_doc)
            self.workspace.write("sessions", session_id, doc)
            return turn_doc

    # -- generation jobs ---------------------------------------------------

    def generate(self, session_id: str) -> dict:
        with self._session_lock(session_id):
            doc = self.get_session(session_id)
            if doc["status"] == "generating":
                raise HTTPException(status_code=409, detail="a generation job is already running")
            state = state_from_doc(doc["state"])
            if not any(m.role == "user" for m in state.history):
                raise HTTPException(status_code=422, detail="session has no user message yet")
            job_id = f"job-{uuid.uuid4().hex[:12]}"
            job = {
                "id": job_id,
                "session_id": session_id,
                "phase": "planning",
                "current": 0,
                "total": 0,
                "flow_id": None,
                "error": None,
                "created_at": _now(),
            }
            self.workspace.write("jobs", job_id, job)
            doc["status"] = "generating"
            self.workspace.write("sessions", session_id, doc)
        thread = threading.Thread(target=self._run_generation, args=(job_id, session_id), daemon=True)
        thread.start()
        return job

    def _run_generation(self, job_id: str, session_id: str) -> None:
        def progress(event) -> None:
            if job_id in self._cancelled:
                raise _JobCancelled()
            if event.phase == "done":
                # the job flips to done only below, together with its flow_id
                return
            job = self.workspace.read("jobs", job_id) or {}
            job["phase"] = event.phase
            job["current"] = event.current
            job["total"] = event.total
            self.workspace.write("jobs", job_id, job)

        session = self.get_session(session_id)
        state = state_from_doc(session["state"])
        try:
            intent = finalize(state)
            try:
                result = assemble(
                    intent,
                    self.catalog,
                    self.gateway,
                    self.config,
                    on_progress=progress,
                )
                flow, plan, flagged = result.flow, result.plan, None
            except ReviewExhausted as exc:
                flow, plan, flagged = exc.flow, None, exc.verdict
            self.workspace.write_bytes("flows", flow.id, serialize(flow), ".flow.json")
            if plan is not None:
                self.workspace.write("plans", flow.id, plan_to_doc(plan), ".plan.json")
            with self._session_lock(session_id):
                doc = self.get_session(session_id)
                # back to chatting so the user can refine and regenerate
                doc["status"] = "chatting"
                doc["flow_ids"].append(flow.id)
                self.workspace.write("sessions", session_id, doc)
            # last write: observers of phase=done can rely on flow_id and session state
            job = self.workspace.read("jobs", job_id) or {}
            job["phase"] = "done"
            job["flow_id"] = flow.id
            if flagged is not None:
                job["warning"] = "reviewer was not satisfied with the final flow"
            self.workspace.write("jobs", job_id, job)
        except _JobCancelled:
            self._fail_job(job_id, session_id, "cancelled")
        except Exception as exc:
            self._fail_job(job_id, session_id, _safe_error(exc))

    def _fail_job(self, job_id: str, session_id: str, message: str) -> None:
        job = self.workspace.read("jobs", job_id) or {}
        job["phase"] = "failed"
        job["error"] = message
        self.workspace.write("jobs", job_id, job)
        with self._session_lock(session_id):
            doc = self.get_session(session_id)
            doc["status"] = "chatting"
            self.workspace.write("sessions", session_id, doc)

    def get_job(self, job_id: str) -> dict:
        doc = self.workspace.read("jobs", job_id)
        if doc is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        return doc

    def cancel_job(self, job_id: str) -> dict:
        doc = self.get_job(job_id)
        if doc["phase"] not in ("done", "failed"):
            self._cancelled.add(job_id)
        return {"id": job_id, "cancelling": doc["phase"] not in ("done", "failed")}

    # -- flows ---------------------------------------------------------------

    def get_flow_doc(self, flow_id: str) -> dict:
        path = self.workspace.path("flows", flow_id, ".flow.json")
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown flow {flow_id}")
        return json.loads(path.read_text(encoding="utf-8"))

    def put_flow(self, flow_id: str, doc: dict) -> dict:
        try:
            doc = dict(doc)
            doc["id"] = flow_id
            doc["provenance"] = "edited"
            flow = flow_from_doc(doc)
        except SchemaError as exc:
            raise HTTPException(status_code=422, detail={"path": exc.path, "error": str(exc)}) from exc
        self.workspace.write_bytes("flows", flow_id, serialize(flow), ".flow.json")
        return flow_to_doc(flow)

    # -- runs ----------------------------------------------------------------

    def start_run(self, flow_id: str) -> dict:
        doc = self.get_flow_doc(flow_id)
        try:
            flow = flow_from_doc(doc)
        except SchemaError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        report = validate(flow, self.catalog)
        if not report.ok:
            raise HTTPException(
                status_code=422,
                detail={
                    "error": "flow fails validation",
                    "violations": [
                        {"rule": v.rule, "subject": v.subject, "detail": v.detail}
                        for v in report.violations
                    ],
                },
            )
        run_id = f"run-{uuid.uuid4().hex[:12]}"
        run_doc = {"id": run_id, "flow_id": flow_id, "status": "running", "result": None}
        self.workspace.write("runs", run_id, run_doc)
        thread = threading.Thread(target=self._run_flow, args=(run_id, flow), daemon=True)
        thread.start()
        return run_doc

    def _run_flow(self, run_id: str, flow) -> None:
        def snapshot(_node_id: str, partial) -> None:
            doc = {
                "id": run_id,
                "flow_id": flow.id,
                "status": "running",
                "result": run_to_doc(partial),
            }
            self.workspace.write("runs", run_id, doc)

        try:
            result = run_flow(
                flow, self.gateway, self.config, self.catalog, on_node_complete=snapshot
            )
            doc = {
                "id": run_id,
                "flow_id": flow.id,
                "status": result.status,
                "result": run_to_doc(result),
            }
        except InvalidFlow as exc:
            doc = {"id": run_id, "flow_id": flow.id, "status": "failed", "error": str(exc), "result": None}
        except Exception as exc:
            doc = {
                "id": run_id,
                "flow_id": flow.id,
                "status": "failed",
                "error": _safe_error(exc),
                "result": None,
            }
        self.workspace.write("runs", run_id, doc)

    def get_run(self, run_id: str) -> dict:
        doc = self.workspace.read("runs", run_id)
        if doc is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        return doc


class _JobCancelled(Exception):
    pass


def create_app(
    workspace_dir: str | Path,
    config: Config | None = None,
    gateway: LLMGateway | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    config = config or default_config()
    if gateway is None:
        raise ValueError("create_app needs a gateway (live, replay, record, or mock)")
    service = FlowSmithService(Workspace(workspace_dir), config, gateway)
    app = FastAPI(title="flowsmith", version="0.1.0")
    app.state.service = service

    @app.post("/sessions", status_code=201)
    def create_session():
        return service.create_session()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return service.get_session(session_id)

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: dict):
        return service.post_message(session_id, body)

    @app.post("/sessions/{session_id}/generate", status_code=202)
    def generate(session_id: str):
        return service.generate(session_id)

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return service.get_job(job_id)

    @app.delete("/jobs/{job_id}", status_code=202)
    def cancel_job(job_id: str):
        return service.cancel_job(job_id)

    @app.get("/flows/{flow_id}")
    def get_flow(flow_id: str):
        return JSONResponse(service.get_flow_doc(flow_id))

    @app.put("/flows/{flow_id}")
    def put_flow(flow_id: str, body: dict):
        return service.put_flow(flow_id, body)

    @app.post("/flows/{flow_id}/run", status_code=202)
    def run(flow_id: str):
        return service.start_run(flow_id)

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        return service.get_run(run_id)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

        @app.get("/", include_in_schema=False)
        def index():
            return FileResponse(str(Path(static_dir) / "index.html"))

    return app
