import json

import httpx
import pytest

from chat2img.errors import BackendError
from chat2img.llm import (
    ArgsEchoMock,
    ConstantBackend,
    DirectTripleMock,
    FENCED_ARGS,
    RemoteChatBackend,
    RewriteEchoMock,
    RolePlayMock,
    ScriptedBackend,
    last_user_line,
)


def _chat_response(content):
    return {"choices": [{"message": {"content": content}}]}


def test_remote_backend_posts_expected_payload():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=_chat_response("ok"))

    backend = RemoteChatBackend(
        "http://chat.test/v1", "test-model", system_prompt="be brief",
        transport=httpx.MockTransport(handler), backoff=0.0,
    )
    out = backend.complete("hello", temperature=0.9, max_tokens=64)
    assert out == "ok"
    assert seen["url"].endswith("/v1/chat/completions")
    assert seen["body"]["model"] == "test-model"
    assert seen["body"]["temperature"] == 0.9
    assert seen["body"]["max_tokens"] == 64
    assert seen["body"]["messages"][0] == {"role": "system", "content": "be brief"}
    assert seen["body"]["messages"][1] == {"role": "user", "content": "hello"}


def test_remote_backend_omits_optional_fields():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=_chat_response("ok"))

    backend = RemoteChatBackend(
        "http://chat.test", "m", transport=httpx.MockTransport(handler), backoff=0.0
    )
    backend.complete("hi")
    assert "temperature" not in seen["body"]
    assert "max_tokens" not in seen["body"]
    assert [m["role"] for m in seen["body"]["messages"]] == ["user"]


def test_remote_backend_sends_api_key(monkeypatch):
    monkeypatch.setenv("CHAT2IMG_API_KEY", "sk-test-123")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("Authorization")
        return httpx.Response(200, json=_chat_response("ok"))

    backend = RemoteChatBackend(
        "http://chat.test", "m", transport=httpx.MockTransport(handler), backoff=0.0
    )
    backend.complete("hi")
    assert seen["auth"] == "Bearer sk-test-123"


def test_remote_backend_retries_5xx_then_succeeds():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] < 3:
            return httpx.Response(500)
        return httpx.Response(200, json=_chat_response("finally"))

    backend = RemoteChatBackend(
        "http://chat.test", "m", max_retries=3, backoff=0.0,
        transport=httpx.MockTransport(handler),
    )
    assert backend.complete("hi") == "finally"
    assert calls["n"] == 3


def test_remote_backend_4xx_fails_immediately():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(422)

    backend = RemoteChatBackend(
        "http://chat.test", "m", max_retries=3, backoff=0.0,
        transport=httpx.MockTransport(handler),
    )
    with pytest.raises(BackendError):
        backend.complete("hi")
    assert calls["n"] == 1


def test_remote_backend_exhausts_transport_retries():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        raise httpx.ConnectError("refused")

    backend = RemoteChatBackend(
        "http://chat.test", "m", max_retries=2, backoff=0.0,
        transport=httpx.MockTransport(handler),
    )
    with pytest.raises(BackendError, match="after 2 attempts"):
        backend.complete("hi")
    assert calls["n"] == 2


def test_remote_backend_rejects_malformed_response():
    def handler(request):
        return httpx.Response(200, json={"noise": True})

    backend = RemoteChatBackend(
        "http://chat.test", "m", backoff=0.0, transport=httpx.MockTransport(handler)
    )
    with pytest.raises(BackendError, match="malformed"):
        backend.complete("hi")


# ---------------------------------------------------------------------------
# mocks


def test_last_user_line_picks_final_match():
    prompt = "USER: first\nASSISTANT: reply\nUSER: second\nextra trailing text"
    assert last_user_line(prompt) == "second"
    assert last_user_line("no markers here") == ""


def test_rewrite_echo_mock():
    mock = RewriteEchoMock()
    out = mock.complete("Rewrite this:\nUSER: a red fox")
    assert out == "a red fox, highly detailed, best quality"
    assert mock.complete("no user line") == ""


def test_rewrite_echo_is_deterministic():
    mock = RewriteEchoMock()
    prompt = "USER: same input"
    assert mock.complete(prompt) == mock.complete(prompt)


def test_args_echo_mock_returns_first_block():
    prompt = (
        "demo one\n```args\nsteps: 25\nsampler: ddim\n```\n"
        "demo two\n```args\nsteps: 40\n```\n"
    )
    out = ArgsEchoMock().complete(prompt)
    block = FENCED_ARGS.search(out)
    assert block is not None
    assert "steps: 25" in block.group(1)
    assert "steps: 40" not in block.group(1)


def test_args_echo_mock_empty_block_without_demos():
    out = ArgsEchoMock().complete("no demonstrations at all")
    assert out == "```args\n```"


def test_direct_triple_mock_structure():
    mock = DirectTripleMock("PhotoReal Portraits", args_lines=("steps: 30", "cfg_scale: 8"))
    out = mock.complete("USER: my dog on a hill")
    lines = out.splitlines()
    assert lines[0].startswith("PROMPT: my dog on a hill")
    assert lines[1] == "MODEL: PhotoReal Portraits"
    block = FENCED_ARGS.search(out)
    assert block.group(1) == "steps: 30\ncfg_scale: 8\n"


def test_roleplay_mock_is_deterministic():
    prompt = (
        'You are playing the college student.\n'
        'Require: write one casual request.\n'
        'Input: the professional prompt "a lighthouse at dusk, oil painting style"'
    )
    mock = RolePlayMock()
    assert mock.complete(prompt) == mock.complete(prompt)
    assert "lighthouse at dusk" in mock.complete(prompt)


def test_roleplay_mock_drops_tag_spam():
    prompt = (
        'You are playing the gardener.\n'
        'Input: the professional prompt "a quiet garden shed, masterpiece, '
        'best quality, 8k, ultra detailed"'
    )
    out = RolePlayMock().complete(prompt)
    assert "masterpiece" not in out
    assert "8k" not in out
    assert "garden shed" in out


def test_roleplay_mock_multi_turn_shape():
    prompt = (
        'You are playing the teacher.\n'
        'Require: produce a multi-turn dialogue.\n'
        'Input: the professional prompt "a classroom full of plants in the morning light"'
    )
    out = RolePlayMock().complete(prompt)
    lines = out.splitlines()
    assert lines[0].startswith("USER: ")
    assert lines[1].startswith("ASSISTANT: ")
    assert lines[2].startswith("USER: ")


def test_constant_backend():
    judge = ConstantBackend("keep", id="mock-judge")
    assert judge.complete("anything") == "keep"
    assert judge.id == "mock-judge"


def test_scripted_backend_plays_and_exhausts():
    backend = ScriptedBackend(["one", BackendError("boom"), "three"])
    assert backend.complete("x") == "one"
    with pytest.raises(BackendError, match="boom"):
        backend.complete("x")
    assert backend.complete("x") == "three"
    assert backend.calls == 3
    with pytest.raises(BackendError, match="exhausted"):
        backend.complete("x")
