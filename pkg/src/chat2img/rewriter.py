"""Stage 1: rewrite freestyle chat into a professional prompt.

The backend sees a fixed task instruction followed by the serialized
conversation, so every request carries the same task marker regardless of
input kind. The instruction text is configurable; the default lives here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .datastore import ChatInput
from .errors import BackendError, RewriteError
from .llm import ChatBackend

DEFAULT_INSTRUCTION = "Rewrite the following request into a professional text-to-image prompt:"
DEFAULT_TOKEN_CAP = 512


def serialize_input(chat: ChatInput) -> str:
    """Role-tagged lines in turn order, plus an image marker when present."""
    lines = [f"{turn.role.upper()}: {turn.text}" for turn in chat.turns]
    if chat.image_ref is not None:
        lines.append(f"[image:{chat.image_ref}]")
    return "\n".join(lines)


def build_prefix(chat: ChatInput, instruction: str = DEFAULT_INSTRUCTION) -> str:
    return f"{instruction}\n{serialize_input(chat)}"


def truncate_tokens(text: str, cap: int) -> str:
    tokens = text.split()
    if len(tokens) <= cap:
        return text
    return " ".join(tokens[:cap])


@dataclass
class Rewriter:
    """Runs the rewrite backend and enforces the output contract."""

    backend: ChatBackend
    instruction: str = DEFAULT_INSTRUCTION
    token_cap: int = DEFAULT_TOKEN_CAP
    temperature: float = field(default=0.2)  # rewriting wants near-determinism

    def rewrite(self, chat: ChatInput) -> str:
        prefix = build_prefix(chat, self.instruction)
        try:
            raw = self.backend.complete(prefix, temperature=self.temperature)
        except BackendError as exc:
            err = RewriteError(f"rewrite backend failed: {exc}")
            err.prefix = prefix  # partial context for the failed trace
            raise err from exc
        prompt = raw.strip()
        if not prompt:
            raise RewriteError("empty rewrite")
        return truncate_tokens(prompt, self.token_cap)
