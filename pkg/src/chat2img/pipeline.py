"""Orchestration: Stage 1 -> Stage 2 -> Stage 3 -> dispatch for one request.

Besides the staged mode (run_evo) there are two comparison modes:
run_direct asks one backend call for prompt + model + args in a single
structured block and fails without fallback when any part is unusable;
run_fixed_baseline skips selection entirely and always uses one configured
model with a fixed argument set.

Every accepted request yields exactly one persisted trace, failed or not,
and traces persist before their render job starts so step-wise evaluation
never waits on image backends.
"""

from __future__ import annotations

import logging
import re
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .argconf import ArgConfigurator, parse_args
from .argschema import ArgumentSet
from .datastore import ChatInput, ModelRegistry, read_records, write_records, append_records
from .encoders import Encoder
from .errors import (
    BackendError,
    Chat2ImgError,
    OutputParseError,
    RenderError,
    RewriteError,
    UnknownModelError,
    ValidationError,
)
from .llm import FENCED_ARGS, ChatBackend
from .render import ImageStore, Renderer
from .rewriter import Rewriter, serialize_input
from .selector import TokenHead, select

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# trace types


@dataclass
class JobRef:
    """Live handle for one render job; mutated in place as it progresses."""

    job_id: str
    status: str = "queued"  # queued | running | done | failed
    image_digest: str | None = None
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "status": self.status,
            "image_digest": self.image_digest,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "JobRef":
        return cls(job_id=obj["job_id"], status=obj["status"],
                   image_digest=obj.get("image_digest"), error=obj.get("error"))


@dataclass(frozen=True)
class TraceSelection:
    """Serializable selection summary stored in a trace."""

    model_id: str
    probability: float | None
    model_block_probs: tuple[float, ...]
    mode: str
    no_model: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "probability": self.probability,
            "model_block_probs": list(self.model_block_probs),
            "mode": self.mode,
            "no_model": self.no_model,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TraceSelection":
        return cls(
            model_id=obj["model_id"],
            probability=obj.get("probability"),
            model_block_probs=tuple(obj.get("model_block_probs", ())),
            mode=obj.get("mode", "constrained"),
            no_model=obj.get("no_model", False),
        )


@dataclass
class StepwiseTrace:
    trace_id: str
    mode: str  # evo | direct | fixed_baseline
    input: ChatInput
    created_at: float
    sample_id: str | None = None
    rewritten_prompt: str | None = None
    selection: TraceSelection | None = None
    args: ArgumentSet | None = None
    arg_fallback: bool = False
    arg_retries: int = 0
    demo_ids: tuple[str, ...] = ()
    image_job: JobRef | None = None
    durations: dict[str, float] = field(default_factory=dict)
    failing_stage: str | None = None
    error: str | None = None
    error_kind: str | None = None  # "backend" | "logic"

    @property
    def failed(self) -> bool:
        return self.failing_stage is not None

    def to_json(self) -> dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "mode": self.mode,
            "created_at": self.created_at,
            "sample_id": self.sample_id,
            "input": self.input.to_json(),
            "rewritten_prompt": self.rewritten_prompt,
            "selection": self.selection.to_json() if self.selection else None,
            "args": self.args,
            "arg_fallback": self.arg_fallback,
            "arg_retries": self.arg_retries,
            "demo_ids": list(self.demo_ids),
            "image_job": self.image_job.to_json() if self.image_job else None,
            "durations": {k: round(v, 6) for k, v in self.durations.items()},
            "failing_stage": self.failing_stage,
            "error": self.error,
            "error_kind": self.error_kind,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "StepwiseTrace":
        return cls(
            trace_id=obj["trace_id"],
            mode=obj["mode"],
            input=ChatInput.from_json(obj["input"]),
            created_at=obj["created_at"],
            sample_id=obj.get("sample_id"),
            rewritten_prompt=obj.get("rewritten_prompt"),
            selection=TraceSelection.from_json(obj["selection"]) if obj.get("selection") else None,
            args=obj.get("args"),
            arg_fallback=obj.get("arg_fallback", False),
            arg_retries=obj.get("arg_retries", 0),
            demo_ids=tuple(obj.get("demo_ids", ())),
            image_job=JobRef.from_json(obj["image_job"]) if obj.get("image_job") else None,
            durations=dict(obj.get("durations", {})),
            failing_stage=obj.get("failing_stage"),
            error=obj.get("error"),
            error_kind=obj.get("error_kind"),
        )


# ---------------------------------------------------------------------------
# stores


class TraceStore:
    """Append-only JSONL trace log with an in-memory id index."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._cache: dict[str, StepwiseTrace] = {}
        if self.path.exists():
            for _, obj in read_records(self.path, "traces"):
                trace = StepwiseTrace.from_json(obj)
                self._cache[trace.trace_id] = trace

    def append(self, trace: StepwiseTrace) -> None:
        with self._lock:
            append_records(self.path, "traces", [trace.to_json()])
            self._cache[trace.trace_id] = trace

    def get(self, trace_id: str) -> StepwiseTrace | None:
        with self._lock:
            return self._cache.get(trace_id)

    def all(self) -> list[StepwiseTrace]:
        with self._lock:
            return list(self._cache.values())

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)


def load_traces(path: str | Path) -> list[StepwiseTrace]:
    return [StepwiseTrace.from_json(obj) for _, obj in read_records(path, "traces")]


def save_traces(path: str | Path, traces: Iterable[StepwiseTrace]) -> None:
    write_records(path, "traces", [t.to_json() for t in traces])


class JobStore:
    """Render-job execution on a bounded pool; workers=0 runs inline."""

    def __init__(self, renderer: Renderer, images: ImageStore, workers: int = 0) -> None:
        self.renderer = renderer
        self.images = images
        self._jobs: dict[str, JobRef] = {}
        self._requests: dict[str, tuple[str, str, ArgumentSet]] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None

    def submit(self, model_id: str, prompt: str, args: ArgumentSet) -> JobRef:
        ref = JobRef(job_id=uuid.uuid4().hex)
        with self._lock:
            self._jobs[ref.job_id] = ref
            self._requests[ref.job_id] = (model_id, prompt, args)
        return ref

    def start(self, job_id: str) -> None:
        if self._pool is not None:
            self._pool.submit(self._run, job_id)
        else:
            self._run(job_id)

    def _run(self, job_id: str) -> None:
        with self._lock:
            ref = self._jobs[job_id]
            model_id, prompt, args = self._requests[job_id]
            ref.status = "running"
        try:
            png = self.renderer.render(model_id, prompt, args)
            digest = self.images.put(png)
        except (RenderError, Chat2ImgError) as exc:
            log.warning("render job %s failed: %s", job_id, exc)
            with self._lock:
                ref.status = "failed"
                ref.error = str(exc)
            return
        with self._lock:
            ref.status = "done"
            ref.image_digest = digest

    def get(self, job_id: str) -> JobRef | None:
        with self._lock:
            return self._jobs.get(job_id)

    def shutdown(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)


# ---------------------------------------------------------------------------
# direct-mode output parsing

# horizontal whitespace only: a blank PROMPT line must not swallow the next line
_PROMPT_LINE = re.compile(r"^PROMPT:[^\S\n]*(.+)$", re.MULTILINE)
_MODEL_LINE = re.compile(r"^MODEL:[^\S\n]*(.+)$", re.MULTILINE)

DIRECT_INSTRUCTION = (
    "Answer the request below with three parts and nothing else:\n"
    "PROMPT: <professional text-to-image prompt>\n"
    "MODEL: <model name>\n"
    "```args\n<key: value lines>\n```"
)


def parse_direct_output(raw: str) -> tuple[str, str, str]:
    """Extract (prompt, model name, raw args block) from a direct-mode answer."""
    pm = _PROMPT_LINE.search(raw)
    mm = _MODEL_LINE.search(raw)
    am = FENCED_ARGS.search(raw)
    if pm is None or mm is None or am is None:
        missing = [
            name
            for name, hit in (("PROMPT", pm), ("MODEL", mm), ("args block", am))
            if hit is None
        ]
        raise OutputParseError(f"direct output missing {', '.join(missing)}")
    prompt = pm.group(1).strip()
    if not prompt:
        raise OutputParseError("direct output has an empty PROMPT")
    return prompt, mm.group(1).strip(), raw


# ---------------------------------------------------------------------------
# pipeline


def _error_kind(exc: Exception) -> str:
    if isinstance(exc, BackendError) or isinstance(exc.__cause__, BackendError):
        return "backend"
    return "logic"


class Pipeline:
    def __init__(
        self,
        registry: ModelRegistry,
        encoder: Encoder,
        head: TokenHead,
        rewriter: Rewriter,
        configurator: ArgConfigurator,
        jobs: JobStore,
        traces: TraceStore,
        *,
        direct_backend: ChatBackend | None = None,
        baseline_model_id: str | None = None,
        baseline_args: ArgumentSet | None = None,
        selection_mode: str = "constrained",
        include_word_rows: bool = True,
        direct_retries: int = 2,
    ) -> None:
        if head.num_models != len(registry.models):
            raise ValidationError("head row count does not match registry size")
        self.registry = registry
        self.encoder = encoder
        self.head = head
        self.rewriter = rewriter
        self.configurator = configurator
        self.jobs = jobs
        self.traces = traces
        self.direct_backend = direct_backend
        self.baseline_model_id = baseline_model_id
        self.baseline_args = baseline_args
        self.selection_mode = selection_mode
        self.include_word_rows = include_word_rows
        self.direct_retries = direct_retries

    # -- helpers -----------------------------------------------------------

    def _new_trace(self, mode: str, chat: ChatInput, sample_id: str | None) -> StepwiseTrace:
        return StepwiseTrace(
            trace_id=uuid.uuid4().hex, mode=mode, input=chat,
            created_at=time.time(), sample_id=sample_id,
        )

    def _fail(self, trace: StepwiseTrace, stage: str, exc: Exception) -> StepwiseTrace:
        trace.failing_stage = stage
        trace.error = str(exc)
        trace.error_kind = _error_kind(exc)
        self.traces.append(trace)
        return trace

    def _dispatch_and_persist(self, trace: StepwiseTrace, model_id: str) -> StepwiseTrace:
        t0 = time.perf_counter()
        assert trace.rewritten_prompt is not None and trace.args is not None
        job = self.jobs.submit(model_id, trace.rewritten_prompt, trace.args)
        trace.image_job = job
        trace.durations["dispatch"] = time.perf_counter() - t0
        self.traces.append(trace)  # persisted with the job still queued
        self.jobs.start(job.job_id)
        return trace

    def run(self, chat: ChatInput, mode: str, sample_id: str | None = None) -> StepwiseTrace:
        if mode == "evo":
            return self.run_evo(chat, sample_id)
        if mode == "direct":
            return self.run_direct(chat, sample_id)
        if mode == "fixed_baseline":
            return self.run_fixed_baseline(chat, sample_id)
        raise ValidationError(f"unknown pipeline mode {mode!r}")

    # -- staged mode -------------------------------------------------------

    def run_evo(self, chat: ChatInput, sample_id: str | None = None) -> StepwiseTrace:
        trace = self._new_trace("evo", chat, sample_id)

        t0 = time.perf_counter()
        try:
            prompt = self.rewriter.rewrite(chat)
        except RewriteError as exc:
            return self._fail(trace, "rewrite", exc)
        trace.rewritten_prompt = prompt
        trace.durations["rewrite"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        try:
            h = self.encoder.encode(chat, prompt)
            sel = select(self.head, h, self.selection_mode,
                         include_word_rows=self.include_word_rows)
        except Chat2ImgError as exc:
            return self._fail(trace, "select", exc)
        if sel.no_model or sel.model_id is None:
            return self._fail(trace, "select",
                              ValidationError("no model token selected"))
        trace.selection = TraceSelection(
            model_id=sel.model_id,
            probability=sel.probability,
            model_block_probs=tuple(float(x) for x in sel.model_block_probs),
            mode=sel.mode,
            no_model=sel.no_model,
        )
        trace.durations["select"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        model = self.registry.model(sel.model_id)
        outcome = self.configurator.configure(chat, prompt, model)
        trace.args = outcome.args
        trace.arg_fallback = outcome.fallback
        trace.arg_retries = outcome.retry_count
        trace.demo_ids = outcome.demo_ids
        trace.durations["configure"] = time.perf_counter() - t0

        return self._dispatch_and_persist(trace, model.model_id)

    # -- direct-prediction baseline ---------------------------------------

    def run_direct(self, chat: ChatInput, sample_id: str | None = None) -> StepwiseTrace:
        if self.direct_backend is None:
            raise ValidationError("direct mode requires a direct backend")
        trace = self._new_trace("direct", chat, sample_id)
        request = f"{DIRECT_INSTRUCTION}\n\n{serialize_input(chat)}"

        t0 = time.perf_counter()
        last_exc: Exception | None = None
        parsed: tuple[str, str, str] | None = None
        prompt_text = request
        for _ in range(self.direct_retries + 1):
            try:
                raw = self.direct_backend.complete(prompt_text)
                parsed = parse_direct_output(raw)
                break
            except (OutputParseError, BackendError) as exc:
                last_exc = exc
                prompt_text = f"{request}\nYour previous answer was invalid ({exc}). Try again."
        if parsed is None:
            assert last_exc is not None
            return self._fail(trace, "direct", last_exc)

        prompt, model_name, raw = parsed
        trace.rewritten_prompt = prompt
        model = self.registry.resolve_name(model_name)
        if model is None:
            return self._fail(trace, "direct", UnknownModelError(model_name))
        trace.selection = TraceSelection(
            model_id=model.model_id, probability=None,
            model_block_probs=(), mode="direct",
        )
        try:
            trace.args = parse_args(raw, self.registry.schema, model.default_args)
        except Chat2ImgError as exc:
            # the baseline stands on its own output: no fallback
            return self._fail(trace, "direct", exc)
        trace.durations["direct"] = time.perf_counter() - t0

        return self._dispatch_and_persist(trace, model.model_id)

    # -- fixed single-model baseline ---------------------------------------

    def run_fixed_baseline(self, chat: ChatInput, sample_id: str | None = None) -> StepwiseTrace:
        if self.baseline_model_id is None:
            raise ValidationError("fixed_baseline mode requires a baseline model id")
        trace = self._new_trace("fixed_baseline", chat, sample_id)
        model = self.registry.model(self.baseline_model_id)

        t0 = time.perf_counter()
        try:
            prompt = self.rewriter.rewrite(chat)
        except RewriteError as exc:
            return self._fail(trace, "rewrite", exc)
        trace.rewritten_prompt = prompt
        trace.durations["rewrite"] = time.perf_counter() - t0

        fixed = self.baseline_args if self.baseline_args is not None else model.default_args
        trace.args = self.registry.schema.validate(fixed)
        return self._dispatch_and_persist(trace, model.model_id)

    # -- plain dispatch ----------------------------------------------------

    def dispatch(self, model_id: str, prompt: str, args: ArgumentSet) -> JobRef:
        self.registry.model(model_id)
        valid = self.registry.schema.validate(args)
        job = self.jobs.submit(model_id, prompt, valid)
        self.jobs.start(job.job_id)
        return job
