"""HTTP gateway contract: sessions, chat, jobs, images, models, traces."""

from __future__ import annotations

import hashlib

import pytest
from fastapi.testclient import TestClient

from chat2img.config import build_context, load_config
from chat2img.errors import RenderError
from chat2img.llm import ScriptedBackend
from chat2img.pipeline import JobStore
from chat2img.rewriter import Rewriter
from chat2img.server import create_app

from conftest import write_workspace

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture()
def gateway(tmp_path):
    config, _ = write_workspace(tmp_path)
    ctx = build_context(config)
    with TestClient(create_app(ctx)) as client:
        yield client, ctx


def _send(client, text, session_id=None):
    body = {"text": text}
    if session_id is not None:
        body["session_id"] = session_id
    return client.post("/v1/chat", json=body)


# ---------------------------------------------------------------------------
# POST /v1/chat


def test_chat_single_message(gateway):
    client, ctx = gateway
    resp = _send(client, "a red fox in fresh snow")
    assert resp.status_code == 200
    payload = resp.json()
    assert set(payload) == {"trace", "job_id", "session_id"}
    trace = payload["trace"]
    assert trace["input"]["kind"] == "single"
    assert trace["input"]["turns"] == [{"role": "user", "text": "a red fox in fresh snow"}]
    assert trace["mode"] == "evo"
    assert trace["failing_stage"] is None
    assert trace["rewritten_prompt"].startswith("a red fox in fresh snow")
    assert trace["selection"]["model_id"] in {m.model_id for m in ctx.registry.models}
    assert isinstance(trace["args"], dict) and trace["args"]
    assert payload["job_id"] == trace["image_job"]["job_id"]
    assert payload["session_id"]
    for stage in ("rewrite", "select", "configure", "dispatch"):
        assert stage in trace["durations"]


def test_chat_rejects_blank_text(gateway):
    client, _ = gateway
    for body in ({"text": "   "}, {"text": ""}, {}):
        resp = client.post("/v1/chat", json=body)
        assert resp.status_code == 400
        assert "non-empty" in resp.json()["error"]


def test_chat_unknown_session_is_404(gateway):
    client, _ = gateway
    resp = _send(client, "hello", session_id="nope")
    assert resp.status_code == 404
    assert "unknown session" in resp.json()["error"]


def test_session_history_grows_two_turns_per_send(gateway):
    client, ctx = gateway
    first = _send(client, "draw a lighthouse").json()
    sid = first["session_id"]
    rewritten = first["trace"]["rewritten_prompt"]
    display = ctx.registry.model(first["trace"]["selection"]["model_id"]).display_name

    second = _send(client, "make it stormy", session_id=sid).json()
    assert second["session_id"] == sid
    turns = second["trace"]["input"]["turns"]
    assert second["trace"]["input"]["kind"] == "history"
    assert [t["role"] for t in turns] == ["user", "assistant", "user"]
    assert turns[0]["text"] == "draw a lighthouse"
    assert turns[1]["text"] == f"{rewritten} [model: {display}]"
    assert turns[2]["text"] == "make it stormy"

    third = _send(client, "closer to the rocks", session_id=sid).json()
    turns = third["trace"]["input"]["turns"]
    assert [t["role"] for t in turns] == ["user", "assistant", "user", "assistant", "user"]
    assert turns[4]["text"] == "closer to the rocks"


def test_multipart_image_on_first_message(gateway):
    client, ctx = gateway
    blob = b"not really a png but opaque bytes"
    resp = client.post(
        "/v1/chat",
        data={"text": "same style as this"},
        files={"image": ("ref.png", blob, "image/png")},
    )
    assert resp.status_code == 200
    trace = resp.json()["trace"]
    assert trace["input"]["kind"] == "multimodal"
    assert trace["input"]["image_ref"] == hashlib.sha256(blob).hexdigest()
    assert trace["input"]["image_ref"] in ctx.images


def test_multipart_without_image_is_single(gateway):
    client, _ = gateway
    resp = client.post("/v1/chat", files={"text": (None, "plain form text")})
    assert resp.status_code == 200
    assert resp.json()["trace"]["input"]["kind"] == "single"


def test_image_after_first_message_is_rejected(gateway):
    client, _ = gateway
    sid = _send(client, "start a session").json()["session_id"]
    resp = client.post(
        "/v1/chat",
        data={"text": "now with an image", "session_id": sid},
        files={"image": ("late.png", b"xx", "image/png")},
    )
    assert resp.status_code == 400
    assert "first message" in resp.json()["error"]


def test_backend_failure_returns_503_and_is_kept_in_history(gateway):
    client, ctx = gateway
    ctx.pipeline.rewriter = Rewriter(ScriptedBackend([]))  # fails every call
    resp = _send(client, "doomed request")
    assert resp.status_code == 503
    payload = resp.json()
    assert payload["job_id"] is None
    trace = payload["trace"]
    assert trace["failing_stage"] == "rewrite"
    assert trace["error_kind"] == "backend"
    assert trace["selection"] is None

    follow = _send(client, "try again", session_id=payload["session_id"])
    assert follow.status_code == 503  # backend is still down
    turns = follow.json()["trace"]["input"]["turns"]
    assert turns[1]["role"] == "assistant"
    assert turns[1]["text"].startswith("(request failed at rewrite:")


def test_logic_failure_returns_200(tmp_path):
    config, _ = write_workspace(tmp_path)
    config = load_config(None, [
        f"paths.workdir={config['paths']['workdir']}",
        "pipeline.mode=direct",
        "pipeline.direct_model=no-such-model",
    ])
    with TestClient(create_app(build_context(config))) as client:
        resp = _send(client, "route me")
        assert resp.status_code == 200
        trace = resp.json()["trace"]
        assert trace["failing_stage"] is not None
        assert trace["error_kind"] == "logic"


# ---------------------------------------------------------------------------
# GET /v1/jobs, /v1/images


def test_job_endpoint_serves_png_when_done(gateway):
    client, _ = gateway
    payload = _send(client, "a terracotta rooftop at dawn").json()
    resp = client.get(f"/v1/jobs/{payload['job_id']}")
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    assert resp.content.startswith(PNG_MAGIC)
    digest = resp.headers["X-Image-Digest"]
    assert digest == hashlib.sha256(resp.content).hexdigest()

    image = client.get(f"/v1/images/{digest}")
    assert image.status_code == 200
    assert image.content == resp.content
    assert image.headers["cache-control"] == "public, max-age=31536000, immutable"


def test_unknown_job_and_image_are_404(gateway):
    client, _ = gateway
    assert client.get("/v1/jobs/deadbeef").status_code == 404
    assert client.get("/v1/images/deadbeef").status_code == 404


def test_failed_job_reports_json_status(tmp_path):
    class FailingRenderer:
        def render(self, model_id, prompt, args):
            raise RenderError("gpu on fire")

    config, _ = write_workspace(tmp_path)
    ctx = build_context(config)
    ctx.jobs = ctx.pipeline.jobs = JobStore(FailingRenderer(), ctx.images, workers=0)
    with TestClient(create_app(ctx)) as client:
        payload = _send(client, "this render will fail").json()
        resp = client.get(f"/v1/jobs/{payload['job_id']}")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "failed"
        assert "gpu on fire" in body["error"]
        assert body["image_digest"] is None


# ---------------------------------------------------------------------------
# GET /v1/models, /v1/traces


def test_models_are_paged_in_token_order(gateway):
    client, ctx = gateway
    resp = client.get("/v1/models")
    assert resp.status_code == 200
    body = resp.json()
    assert body["total"] == len(ctx.registry.models)
    assert [m["model_id"] for m in body["models"]] == [
        m.model_id for m in ctx.registry.models
    ]
    assert [m["token_index"] for m in body["models"]] == list(range(body["total"]))

    page = client.get("/v1/models", params={"offset": 2, "limit": 2}).json()
    assert [m["model_id"] for m in page["models"]] == [
        m.model_id for m in ctx.registry.models[2:4]
    ]


def test_models_clamp_offset_and_limit(gateway):
    client, _ = gateway
    assert client.get("/v1/models", params={"limit": 0}).json()["limit"] == 1
    assert client.get("/v1/models", params={"limit": 9999}).json()["limit"] == 200
    under = client.get("/v1/models", params={"offset": -3}).json()
    assert under["offset"] == 0 and under["models"]
    assert client.get("/v1/models", params={"offset": 999}).json()["models"] == []


def test_trace_endpoint_matches_chat_payload(gateway):
    client, _ = gateway
    payload = _send(client, "a paper crane on a desk").json()
    resp = client.get(f"/v1/traces/{payload['trace']['trace_id']}")
    assert resp.status_code == 200
    stored, posted = resp.json(), payload["trace"]
    # the job advances asynchronously; everything else must match exactly
    stored_job = stored.pop("image_job")
    posted_job = posted.pop("image_job")
    assert stored == posted
    assert stored_job["job_id"] == posted_job["job_id"]

    assert client.get("/v1/traces/missing").status_code == 404


def test_cors_headers_present(gateway):
    client, _ = gateway
    resp = client.get("/v1/models", headers={"Origin": "http://localhost:5173"})
    assert resp.headers["access-control-allow-origin"] == "*"
