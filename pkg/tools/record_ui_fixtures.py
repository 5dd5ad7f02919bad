"""Record mock-backed gateway responses as JSON fixtures for the frontend.

Runs the HTTP gateway in-process and captures the exact payloads the UI
contract tests pin against: a three-send session, a chat-backend failure,
a failed render job, the model listing, and the headers of a finished job.

Usage: python3 tools/record_ui_fixtures.py
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from chat2img.config import build_context, load_config
from chat2img.datastore import build_registry, save_registry
from chat2img.errors import RenderError
from chat2img.llm import ScriptedBackend
from chat2img.pipeline import JobStore
from chat2img.rewriter import Rewriter
from chat2img.sampledata import make_demos
from chat2img.server import create_app

OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def make_ctx(tmp: str):
    demos, display = make_demos(num_models=5, per_model=20, seed=11)
    registry = build_registry(demos, display_names=display)
    work = Path(tmp) / "work"
    work.mkdir(parents=True, exist_ok=True)
    save_registry(registry, work / "registry.jsonl", work / "demos.jsonl")
    return build_context(load_config(None, [f"paths.workdir={work}"]))


def dump(name: str, obj) -> None:
    (OUT / name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT / name}")


def record_session() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        with TestClient(create_app(make_ctx(tmp))) as client:
            first = client.post("/v1/chat",
                                json={"text": "a lighthouse on a cliff at dusk"})
            dump("chat_send1.json", first.json())
            sid = first.json()["session_id"]

            second = client.post("/v1/chat", json={
                "text": "make the sea stormier", "session_id": sid})
            dump("chat_send2.json", second.json())

            third = client.post("/v1/chat", json={
                "text": "and move closer to the rocks", "session_id": sid})
            dump("chat_send3.json", third.json())

            dump("models.json", client.get("/v1/models").json())

            job = client.get(f"/v1/jobs/{first.json()['job_id']}")
            dump("job_done_headers.json", {
                "status_code": job.status_code,
                "content_type": job.headers["content-type"],
                "x_image_digest": job.headers["X-Image-Digest"],
            })


def record_chat_failure() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        ctx = make_ctx(tmp)
        ctx.pipeline.rewriter = Rewriter(ScriptedBackend([]))  # fails every call
        with TestClient(create_app(ctx)) as client:
            resp = client.post("/v1/chat", json={"text": "a doomed request"})
            dump("chat_failure.json",
                 {"status_code": resp.status_code, **resp.json()})


def record_job_failure() -> None:
    class FailingRenderer:
        def render(self, model_id, prompt, args):
            raise RenderError("renderer unavailable")

    with tempfile.TemporaryDirectory() as tmp:
        ctx = make_ctx(tmp)
        ctx.jobs = ctx.pipeline.jobs = JobStore(FailingRenderer(), ctx.images,
                                                workers=0)
        with TestClient(create_app(ctx)) as client:
            payload = client.post("/v1/chat",
                                  json={"text": "this render fails"}).json()
            dump("job_failed.json",
                 client.get(f"/v1/jobs/{payload['job_id']}").json())


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    record_session()
    record_chat_failure()
    record_job_failure()


if __name__ == "__main__":
    main()
