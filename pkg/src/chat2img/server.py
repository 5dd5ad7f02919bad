"""HTTP gateway: chat endpoint with sessions, job/image/model/trace reads.

POST /v1/chat accepts JSON ({"text": ..., "session_id": ...}) or multipart
(text field plus an optional image upload). A session's stored turns are
the user texts and an assistant summary per exchange, so the second send
in a session becomes a 3-turn history input, the third a 5-turn one.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .config import AppContext
from .datastore import ChatInput, Turn
from .errors import Chat2ImgError, ValidationError
from .pipeline import StepwiseTrace


@dataclass
class Session:
    session_id: str
    turns: list[dict[str, Any]] = field(default_factory=list)
    created_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class SessionStore:
    def __init__(self) -> None:
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self) -> Session:
        session = Session(session_id=uuid.uuid4().hex)
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)


def _summary_line(trace: StepwiseTrace, display_name: str | None) -> str:
    if trace.failed:
        return f"(request failed at {trace.failing_stage}: {trace.error})"
    prompt = trace.rewritten_prompt or ""
    if display_name:
        return f"{prompt} [model: {display_name}]"
    return prompt


def create_app(ctx: AppContext) -> FastAPI:
    app = FastAPI(title="chat2img gateway")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions = SessionStore()
    app.state.ctx = ctx
    app.state.sessions = sessions

    @app.post("/v1/chat")
    async def chat(request: Request) -> Response:
        content_type = request.headers.get("content-type", "")
        image_bytes: bytes | None = None
        if content_type.startswith("multipart/"):
            form = await request.form()
            text = str(form.get("text") or "")
            session_id = str(form.get("session_id") or "") or None
            upload = form.get("image")
            if upload is not None and hasattr(upload, "read"):
                image_bytes = await upload.read()
        else:
            try:
                body = await request.json()
            except ValueError:
                body = {}
            text = str(body.get("text") or "")
            session_id = body.get("session_id") or None

        text = text.strip()
        if not text:
            return JSONResponse({"error": "text must be non-empty"}, status_code=400)

        if session_id is not None:
            session = sessions.get(session_id)
            if session is None:
                return JSONResponse({"error": f"unknown session {session_id}"},
                                    status_code=404)
        else:
            session = sessions.create()

        with session.lock:
            prior = [Turn(role=t["role"], text=t["text"]) for t in session.turns]
            try:
                if prior:
                    if image_bytes is not None:
                        return JSONResponse(
                            {"error": "image uploads are only supported on the "
                                      "first message of a session"},
                            status_code=400,
                        )
                    chat_input = ChatInput(
                        kind="history", turns=tuple(prior) + (Turn("user", text),)
                    )
                elif image_bytes is not None:
                    digest = ctx.images.put(image_bytes)
                    chat_input = ChatInput.multimodal(text, digest)
                else:
                    chat_input = ChatInput.single(text)
            except ValidationError as exc:
                return JSONResponse({"error": str(exc)}, status_code=400)

            mode = ctx.config["pipeline"]["mode"]
            try:
                trace = ctx.pipeline.run(chat_input, mode)
            except Chat2ImgError as exc:
                return JSONResponse({"error": str(exc)}, status_code=500)

            display = None
            if trace.selection is not None:
                display = ctx.registry.model(trace.selection.model_id).display_name
            session.turns.append(
                {"role": "user", "text": text, "trace_id": trace.trace_id}
            )
            session.turns.append(
                {"role": "assistant", "text": _summary_line(trace, display),
                 "trace_id": trace.trace_id}
            )

        payload = {
            "trace": trace.to_json(),
            "job_id": trace.image_job.job_id if trace.image_job else None,
            "session_id": session.session_id,
        }
        if trace.failed and trace.error_kind == "backend":
            return JSONResponse(payload, status_code=503)
        return JSONResponse(payload)

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str) -> Response:
        job = ctx.jobs.get(job_id)
        if job is None:
            return JSONResponse({"error": f"unknown job {job_id}"}, status_code=404)
        if job.status == "done" and job.image_digest:
            png = ctx.images.get(job.image_digest)
            return Response(content=png, media_type="image/png",
                            headers={"X-Image-Digest": job.image_digest})
        return JSONResponse(job.to_json())

    @app.get("/v1/images/{digest}")
    def get_image(digest: str) -> Response:
        if digest not in ctx.images:
            return JSONResponse({"error": f"unknown image {digest}"}, status_code=404)
        return Response(
            content=ctx.images.get(digest),
            media_type="image/png",
            headers={"Cache-Control": "public, max-age=31536000, immutable"},
        )

    @app.get("/v1/models")
    def list_models(offset: int = 0, limit: int = 50) -> Response:
        models = ctx.registry.models  # already in stable token-index order
        offset = max(offset, 0)
        limit = max(min(limit, 200), 1)
        page = models[offset : offset + limit]
        return JSONResponse({
            "models": [m.to_json() for m in page],
            "total": len(models),
            "offset": offset,
            "limit": limit,
        })

    @app.get("/v1/traces/{trace_id}")
    def get_trace(trace_id: str) -> Response:
        trace = ctx.traces.get(trace_id)
        if trace is None:
            return JSONResponse({"error": f"unknown trace {trace_id}"}, status_code=404)
        return JSONResponse(trace.to_json())

    return app
