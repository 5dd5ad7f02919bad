"""Chat backends: a remote chat-completion client plus deterministic mocks.

Every pipeline stage that needs text generation talks to a ChatBackend, so
the whole system runs offline by swapping in the mocks below. Mocks are
pure functions of their input text.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import time
from typing import Protocol, Sequence, runtime_checkable

import httpx

from .errors import BackendError

log = logging.getLogger(__name__)

FENCED_ARGS = re.compile(r"```args\s*\n(.*?)```", re.DOTALL)
_USER_LINE = re.compile(r"^USER: (.*)$", re.MULTILINE)


@runtime_checkable
class ChatBackend(Protocol):
    """Single-shot text completion."""

    id: str

    def complete(
        self,
        prompt: str,
        *,
        temperature: float | None = None,
        max_tokens: int | None = None,
    ) -> str: ...


class RemoteChatBackend:
    """Chat-completion-shaped HTTP client with bounded retries.

    POST {base_url}/chat/completions with a system + user message pair;
    expects {"choices": [{"message": {"content": ...}}]}. Retries transport
    errors and 5xx responses with linear backoff; 4xx fails immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        system_prompt: str = "",
        api_key_env: str = "CHAT2IMG_API_KEY",
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.2,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.id = f"remote:{model}"
        self.model = model
        self.system_prompt = system_prompt
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {}
        key = os.environ.get(api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), timeout=timeout, headers=headers,
            transport=transport,
        )

    def complete(
        self,
        prompt: str,
        *,
        temperature: float | None = None,
        max_tokens: int | None = None,
    ) -> str:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": prompt})
        body: dict = {"model": self.model, "messages": messages}
        if temperature is not None:
            body["temperature"] = temperature
        if max_tokens is not None:
            body["max_tokens"] = max_tokens

        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._client.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last_error = exc
                log.warning("chat backend transport error (attempt %d): %s", attempt + 1, exc)
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, ValueError) as exc:
                        raise BackendError(f"malformed chat response: {exc}") from exc
                if resp.status_code < 500:
                    raise BackendError(f"chat backend rejected request: HTTP {resp.status_code}")
                last_error = BackendError(f"chat backend HTTP {resp.status_code}")
                log.warning("chat backend HTTP %d (attempt %d)", resp.status_code, attempt + 1)
            time.sleep(self.backoff * (attempt + 1))
        raise BackendError(f"chat backend failed after {self.max_retries} attempts: {last_error}")

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# deterministic mocks


def last_user_line(prompt: str) -> str:
    """Text of the final "USER: ..." line in a serialized conversation."""
    matches = _USER_LINE.findall(prompt)
    return matches[-1].strip() if matches else ""


class RewriteEchoMock:
    """Stage-1 stand-in: last user line plus a fixed quality-tag suffix."""

    id = "mock-rewrite"
    suffix = ", highly detailed, best quality"

    def complete(self, prompt: str, *, temperature: float | None = None,
                 max_tokens: int | None = None) -> str:
        text = last_user_line(prompt)
        return text + self.suffix if text else ""


class ArgsEchoMock:
    """Stage-3 stand-in: echo the first fenced args block from the ICL
    prompt (the top-ranked demonstration). Zero-shot prompts get an empty
    block so parsing falls through to defaults."""

    id = "mock-args"

    def complete(self, prompt: str, *, temperature: float | None = None,
                 max_tokens: int | None = None) -> str:
        m = FENCED_ARGS.search(prompt)
        if m:
            return f"```args\n{m.group(1)}```"
        return "```args\n```"


class DirectTripleMock:
    """Direct-prediction stand-in: one structured block carrying prompt,
    model name and args. The model name is fixed at construction so tests
    can point it at a real or an unresolvable model."""

    def __init__(self, model_name: str, args_lines: Sequence[str] = ("steps: 30",)) -> None:
        self.id = f"mock-direct:{model_name}"
        self.model_name = model_name
        self.args_lines = tuple(args_lines)

    def complete(self, prompt: str, *, temperature: float | None = None,
                 max_tokens: int | None = None) -> str:
        text = last_user_line(prompt)
        body = "\n".join(self.args_lines)
        return (
            f"PROMPT: {text}, highly detailed, best quality\n"
            f"MODEL: {self.model_name}\n"
            f"```args\n{body}\n```"
        )


_ROLE_LINE = re.compile(r"You are playing the (.+?)\.")
_PROMPT_QUOTE = re.compile(r'professional prompt "(.*?)"', re.DOTALL)

_SINGLE_SHAPES = (
    'hey, can you make me a picture of {p}?',
    'i need an image showing {p}, nothing fancy',
    'could you draw {p} for me? thanks!',
    'as a {r} i want a pic of {p}',
    'please, could you create something like {p} for me?',
)
_OPENERS = (
    "hi! i'm looking for an image for a small project",
    "hello, i need some artwork",
    "hey there, can you help me with a picture",
)


class RolePlayMock:
    """Benchmark-generation stand-in: reads the role and professional prompt
    back out of the rendered role-play template and emits a deterministic
    casual paraphrase. Multi-turn templates get USER/ASSISTANT lines."""

    id = "mock-roleplay"

    def complete(self, prompt: str, *, temperature: float | None = None,
                 max_tokens: int | None = None) -> str:
        role_m = _ROLE_LINE.search(prompt)
        prompt_m = _PROMPT_QUOTE.search(prompt)
        role = role_m.group(1) if role_m else "person"
        source = prompt_m.group(1) if prompt_m else "something nice"
        # keep the leading subject-ish chunks, drop trailing tag spam
        parts = [s.strip() for s in source.split(",") if s.strip()]
        keep = [s for s in parts if len(s.split()) > 2][:2] or parts[:1]
        subject = " and ".join(keep) if keep else "something nice"
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        shape = _SINGLE_SHAPES[digest[0] % len(_SINGLE_SHAPES)]
        line = shape.format(p=subject, r=role)
        if "multi-turn" in prompt:
            opener = _OPENERS[digest[1] % len(_OPENERS)]
            return (
                f"USER: {opener}\n"
                f"ASSISTANT: sure — what should it look like?\n"
                f"USER: {line}"
            )
        return line


class ConstantBackend:
    """Always returns the same text (handy as a keep/drop judge)."""

    def __init__(self, text: str, id: str = "mock-constant") -> None:
        self.text = text
        self.id = id

    def complete(self, prompt: str, *, temperature: float | None = None,
                 max_tokens: int | None = None) -> str:
        return self.text


class ScriptedBackend:
    """Plays back a fixed sequence of outputs; entries may be exceptions.

    Raises BackendError once the script runs out, which doubles as an
    over-call detector in tests. An empty script is an always-failing
    backend."""

    def __init__(self, outputs: Sequence[str | Exception], id: str = "mock-scripted") -> None:
        self._outputs = list(outputs)
        self._cursor = 0
        self.id = id

    @property
    def calls(self) -> int:
        return self._cursor

    def complete(self, prompt: str, *, temperature: float | None = None,
                 max_tokens: int | None = None) -> str:
        if self._cursor >= len(self._outputs):
            raise BackendError(f"{self.id}: script exhausted after {self._cursor} calls")
        item = self._outputs[self._cursor]
        self._cursor += 1
        if isinstance(item, Exception):
            raise item
        return item
