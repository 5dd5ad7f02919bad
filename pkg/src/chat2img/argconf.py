"""Stage 3: argument configuration by in-context learning.

The selected model's demonstrations are ranked by prompt similarity,
rendered into a fenced-block ICL prompt, and the backend's answer is parsed
against the argument schema. Parse or validation failures retry with error
feedback; after the retry budget the model's default arguments are returned
with a fallback flag, so configure() always yields a schema-valid set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .argschema import ArgumentSchema, ArgumentSet
from .datastore import ChatInput, Demonstration, ModelRecord, ModelRegistry
from .encoders import Encoder
from .errors import ArgumentError, BackendError, OutputParseError
from .llm import FENCED_ARGS, ChatBackend
from .rewriter import serialize_input

log = logging.getLogger(__name__)

DEFAULT_K = 8
DEFAULT_CONTEXT_BUDGET = 6000  # characters

ICL_HEADER = (
    "You configure generation arguments for a text-to-image model. "
    "Follow the demonstration pattern: answer with one fenced block of "
    "\"key: value\" lines and nothing else."
)


@dataclass(frozen=True)
class IclPrompt:
    """Rendered ICL context: header, k demo blocks, then the query."""

    text: str
    demo_ids: tuple[str, ...]

    @property
    def k(self) -> int:
        return len(self.demo_ids)


@dataclass(frozen=True)
class ConfigOutcome:
    args: ArgumentSet
    fallback: bool
    retry_count: int
    demo_ids: tuple[str, ...]


def render_args_block(args: ArgumentSet, schema: ArgumentSchema) -> str:
    lines = [f"{name}: {args[name]}" for name in schema.names if name in args]
    return "```args\n" + "\n".join(lines) + "\n```"


def parse_args(raw: str, schema: ArgumentSchema, defaults: ArgumentSet) -> ArgumentSet:
    """First fenced block wins; unknown keys ignored; missing keys filled
    from `defaults`; values coerced and bounds-checked against the schema."""
    m = FENCED_ARGS.search(raw)
    if m is None:
        raise OutputParseError("no fenced args block in backend output")
    parsed: dict[str, str] = {}
    for line in m.group(1).splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, value = line.partition(":")
        parsed[key.strip()] = value.strip()
    return schema.fill(parsed, defaults)


class ArgConfigurator:
    def __init__(
        self,
        backend: ChatBackend,
        registry: ModelRegistry,
        encoder: Encoder,
        *,
        k: int = DEFAULT_K,
        context_budget: int = DEFAULT_CONTEXT_BUDGET,
        max_retries: int = 2,
    ) -> None:
        self.backend = backend
        self.registry = registry
        self.encoder = encoder
        self.k = k
        self.context_budget = context_budget
        self.max_retries = max_retries

    # -- demo selection ----------------------------------------------------

    def select_demos(self, model_id: str, p: str, k: int) -> list[Demonstration]:
        """Top-k demos by cosine similarity between demo.prompt and p;
        ties break by demo_id ascending."""
        demos = self.registry.demos_for(model_id)
        if k <= 0 or not demos:
            return []
        query = self.encoder.encode_text(p).values
        scored = []
        for demo in demos:
            sim = float(query @ self.encoder.encode_text(demo.prompt).values)
            scored.append((-sim, demo.demo_id, demo))
        scored.sort(key=lambda t: (t[0], t[1]))
        return [demo for _, _, demo in scored[:k]]

    # -- prompt assembly ---------------------------------------------------

    def assemble_icl(
        self,
        chat: ChatInput,
        p: str,
        model: ModelRecord,
        demos: list[Demonstration],
    ) -> IclPrompt:
        """Render header + demo blocks + query, dropping lowest-ranked demos
        until the character budget fits. Never fails: k can always reach 0."""
        kept = list(demos)
        while True:
            text = self._render(chat, p, model, kept)
            if len(text) <= self.context_budget or not kept:
                return IclPrompt(text=text, demo_ids=tuple(d.demo_id for d in kept))
            kept.pop()

    def _render(
        self, chat: ChatInput, p: str, model: ModelRecord, demos: list[Demonstration]
    ) -> str:
        parts = [ICL_HEADER, f"Model: {model.display_name}"]
        for i, demo in enumerate(demos, start=1):
            parts.append(
                f"Demonstration {i}:\nPrompt: {demo.prompt}\n"
                + render_args_block(demo.args, self.registry.schema)
            )
        parts.append(
            "Now the query:\n"
            f"Original request:\n{serialize_input(chat)}\n"
            f"Prompt: {p}\n"
            "Answer with the argument block only."
        )
        return "\n\n".join(parts)

    # -- end-to-end --------------------------------------------------------

    def configure(self, chat: ChatInput, p: str, model: ModelRecord) -> ConfigOutcome:
        demos = self.select_demos(model.model_id, p, self.k)
        icl = self.assemble_icl(chat, p, model, demos)
        prompt = icl.text
        defaults = model.default_args
        for attempt in range(self.max_retries + 1):
            try:
                raw = self.backend.complete(prompt)
                args = parse_args(raw, self.registry.schema, defaults)
            except (OutputParseError, ArgumentError, BackendError) as exc:
                log.warning("argconf attempt %d failed: %s", attempt + 1, exc)
                prompt = f"{icl.text}\nYour previous answer was invalid ({exc}). Try again."
                continue
            return ConfigOutcome(args=args, fallback=False, retry_count=attempt,
                                 demo_ids=icl.demo_ids)
        return ConfigOutcome(args=dict(defaults), fallback=True,
                             retry_count=self.max_retries, demo_ids=icl.demo_ids)
