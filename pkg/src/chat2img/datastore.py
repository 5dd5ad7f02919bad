"""Model registry, demonstration store, and benchmark sample files.

Storage is line-delimited JSON (UTF-8, one record per line) with a version
header line beginning with "#v1". Files load into immutable in-memory
structures; appends rewrite through a temp file and an atomic rename, with
one exclusive writer per path.
"""

from __future__ import annotations

import json
import os
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .argschema import ArgumentSchema, ArgumentSet, default_schema
from .errors import DataFormatError, UnknownModelError, ValidationError

FORMAT_VERSION = "#v1"

_write_locks: dict[str, threading.Lock] = {}
_write_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    key = str(path.resolve())
    with _write_locks_guard:
        return _write_locks.setdefault(key, threading.Lock())


# ---------------------------------------------------------------------------
# chat inputs


@dataclass(frozen=True)
class Turn:
    role: str  # "user" | "assistant"
    text: str

    def __post_init__(self) -> None:
        if self.role not in ("user", "assistant"):
            raise ValidationError(f"bad turn role {self.role!r}")


@dataclass(frozen=True)
class ChatInput:
    """A freestyle request: single text, text plus image, or a dialogue."""

    kind: str  # "single" | "multimodal" | "history"
    turns: tuple[Turn, ...]
    image_ref: str | None = None

    def __post_init__(self) -> None:
        for t in self.turns:
            if not t.text.strip():
                raise ValidationError("turn text must be non-empty")
        if self.kind == "single":
            if len(self.turns) != 1 or self.turns[0].role != "user":
                raise ValidationError("single input must have exactly one user turn")
            if self.image_ref is not None:
                raise ValidationError("single input cannot carry an image")
        elif self.kind == "multimodal":
            if len(self.turns) != 1 or self.turns[0].role != "user":
                raise ValidationError("multimodal input must have exactly one user turn")
            if not self.image_ref:
                raise ValidationError("multimodal input requires an image reference")
        elif self.kind == "history":
            if len(self.turns) < 2:
                raise ValidationError("history input needs at least two turns")
            if self.turns[-1].role != "user":
                raise ValidationError("history input must end with a user turn")
        else:
            raise ValidationError(f"unknown input kind {self.kind!r}")

    @property
    def last_user_text(self) -> str:
        for t in reversed(self.turns):
            if t.role == "user":
                return t.text
        return ""

    def flat_text(self) -> str:
        """All turn texts joined, used for similarity and length filters."""
        return " ".join(t.text for t in self.turns).strip()

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "kind": self.kind,
            "turns": [{"role": t.role, "text": t.text} for t in self.turns],
        }
        if self.image_ref is not None:
            out["image_ref"] = self.image_ref
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ChatInput":
        turns = tuple(Turn(t["role"], t["text"]) for t in obj.get("turns", ()))
        return cls(kind=obj["kind"], turns=turns, image_ref=obj.get("image_ref"))

    @classmethod
    def single(cls, text: str) -> "ChatInput":
        return cls("single", (Turn("user", text),))

    @classmethod
    def multimodal(cls, text: str, image_ref: str) -> "ChatInput":
        return cls("multimodal", (Turn("user", text),), image_ref)

    @classmethod
    def history(cls, turns: Sequence[tuple[str, str]], image_ref: str | None = None) -> "ChatInput":
        return cls("history", tuple(Turn(r, t) for r, t in turns), image_ref)


# ---------------------------------------------------------------------------
# stored record types


@dataclass(frozen=True)
class Demonstration:
    """A human-validated (prompt, model, arguments) record."""

    demo_id: str
    model_id: str
    prompt: str
    args: ArgumentSet
    source_quality: dict[str, int] = field(default_factory=dict)
    image_digest: str | None = None  # reference image, when one was exported

    def __post_init__(self) -> None:
        if not self.demo_id:
            raise ValidationError("demo_id must be non-empty")
        if not self.prompt:
            raise ValidationError(f"demo {self.demo_id}: prompt must be non-empty")
        for k, v in self.source_quality.items():
            if not isinstance(v, int) or v < 0:
                raise ValidationError(f"demo {self.demo_id}: counter {k!r} must be an integer >= 0")

    @property
    def quality(self) -> int:
        return sum(self.source_quality.values())

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "demo_id": self.demo_id,
            "model_id": self.model_id,
            "prompt": self.prompt,
            "args": dict(self.args),
            "source_quality": dict(self.source_quality),
        }
        if self.image_digest is not None:
            out["image_digest"] = self.image_digest
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Demonstration":
        return cls(
            demo_id=obj["demo_id"],
            model_id=obj["model_id"],
            prompt=obj["prompt"],
            args=dict(obj.get("args", {})),
            source_quality={k: int(v) for k, v in obj.get("source_quality", {}).items()},
            image_digest=obj.get("image_digest"),
        )


@dataclass(frozen=True)
class ModelRecord:
    """One registered image model plus its routing metadata."""

    model_id: str
    display_name: str
    description: str
    base_family: str
    token_index: int
    default_args: ArgumentSet
    demo_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValidationError("model_id must be non-empty")
        if self.token_index < 0:
            raise ValidationError(f"model {self.model_id}: token_index must be >= 0")

    def to_json(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "display_name": self.display_name,
            "description": self.description,
            "base_family": self.base_family,
            "token_index": self.token_index,
            "default_args": dict(self.default_args),
            "demo_ids": list(self.demo_ids),
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ModelRecord":
        return cls(
            model_id=obj["model_id"],
            display_name=obj.get("display_name", obj["model_id"]),
            description=obj.get("description", ""),
            base_family=obj.get("base_family", ""),
            token_index=int(obj["token_index"]),
            default_args=dict(obj.get("default_args", {})),
            demo_ids=tuple(obj.get("demo_ids", ())),
        )


@dataclass(frozen=True)
class BenchmarkSample:
    """One paired benchmark record: an input plus its relative ground truth."""

    sample_id: str
    input: ChatInput
    gt_prompt: str
    gt_model_id: str
    gt_args: ArgumentSet
    split: str  # "train" | "test"
    setting: str = "supervised"  # "supervised" | "fewshot"

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise ValidationError("sample_id must be non-empty")
        if self.split not in ("train", "test"):
            raise ValidationError(f"sample {self.sample_id}: bad split {self.split!r}")
        if self.setting not in ("supervised", "fewshot"):
            raise ValidationError(f"sample {self.sample_id}: bad setting {self.setting!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "input": self.input.to_json(),
            "gt_prompt": self.gt_prompt,
            "gt_model_id": self.gt_model_id,
            "gt_args": dict(self.gt_args),
            "split": self.split,
            "setting": self.setting,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "BenchmarkSample":
        return cls(
            sample_id=obj["sample_id"],
            input=ChatInput.from_json(obj["input"]),
            gt_prompt=obj["gt_prompt"],
            gt_model_id=obj["gt_model_id"],
            gt_args=dict(obj.get("gt_args", {})),
            split=obj["split"],
            setting=obj.get("setting", "supervised"),
        )


# ---------------------------------------------------------------------------
# line-delimited IO


def read_records(path: str | os.PathLike, kind: str) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) from a versioned JSONL file."""
    p = Path(path)
    if not p.exists():
        raise DataFormatError("file does not exist", path=str(p))
    with p.open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(FORMAT_VERSION):
            raise DataFormatError(
                f"missing {FORMAT_VERSION} header (got {header[:40]!r})", path=str(p), line=1
            )
        expected = f"{FORMAT_VERSION} chat2img/{kind}"
        if header.strip() != expected:
            raise DataFormatError(
                f"wrong file kind: expected {expected!r}, got {header[:40]!r}",
                path=str(p),
                line=1,
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"bad JSON: {exc}", path=str(p), line=lineno) from exc
            if not isinstance(obj, dict):
                raise DataFormatError("record is not an object", path=str(p), line=lineno)
            yield lineno, obj


def write_records(path: str | os.PathLike, kind: str, records: Iterable[Mapping[str, Any]]) -> int:
    """Write a fresh versioned JSONL file atomically. Returns record count."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(p):
        tmp = p.with_name(p.name + ".tmp")
        n = 0
        with tmp.open("w", encoding="utf-8") as fh:
            fh.write(f"{FORMAT_VERSION} chat2img/{kind}\n")
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                n += 1
        os.replace(tmp, p)
    return n


def append_records(path: str | os.PathLike, kind: str, records: Iterable[Mapping[str, Any]]) -> int:
    """Append records atomically (temp file + rename). Creates the file with
    a header when absent. Returns the number of records written."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(p):
        existing: list[str] = []
        if p.exists():
            with p.open("r", encoding="utf-8") as fh:
                header = fh.readline().rstrip("\n")
                if not header.startswith(FORMAT_VERSION):
                    raise DataFormatError("missing version header", path=str(p), line=1)
                existing = [ln.rstrip("\n") for ln in fh if ln.strip()]
            header_line = header
        else:
            header_line = f"{FORMAT_VERSION} chat2img/{kind}"
        new_lines = [json.dumps(rec, ensure_ascii=False) for rec in records]
        tmp = p.with_name(p.name + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            fh.write(header_line + "\n")
            for ln in existing:
                fh.write(ln + "\n")
            for ln in new_lines:
                fh.write(ln + "\n")
        os.replace(tmp, p)
    return len(new_lines)


# ---------------------------------------------------------------------------
# registry


class ModelRegistry:
    """Immutable view over model records and their demonstrations."""

    def __init__(
        self,
        models: Sequence[ModelRecord],
        demos: Sequence[Demonstration] = (),
        schema: ArgumentSchema | None = None,
    ):
        self.schema = schema or default_schema()
        self._models: dict[str, ModelRecord] = {}
        self._demos: dict[str, Demonstration] = {}
        self._demos_by_model: dict[str, list[str]] = {}

        for d in demos:
            if d.demo_id in self._demos:
                raise ValidationError(f"duplicate demo_id {d.demo_id!r}")
            self._demos[d.demo_id] = d

        for m in models:
            if m.model_id in self._models:
                raise ValidationError(f"duplicate model_id {m.model_id!r}")
            self._models[m.model_id] = m
            self._demos_by_model[m.model_id] = []

        indices = sorted(m.token_index for m in self._models.values())
        if indices != list(range(len(self._models))):
            raise ValidationError(
                f"token_index values {indices} are not a bijection onto 0..{len(self._models) - 1}"
            )

        for m in self._models.values():
            self.schema.validate(m.default_args)
            for demo_id in m.demo_ids:
                if demo_id not in self._demos:
                    raise ValidationError(f"model {m.model_id}: dangling demo_id {demo_id!r}")

        for d in self._demos.values():
            if d.model_id not in self._models:
                raise ValidationError(f"demo {d.demo_id}: unknown model_id {d.model_id!r}")
            self.schema.validate(d.args)
            self._demos_by_model[d.model_id].append(d.demo_id)

    def __len__(self) -> int:
        return len(self._models)

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._models

    @property
    def models(self) -> list[ModelRecord]:
        return sorted(self._models.values(), key=lambda m: m.token_index)

    @property
    def demos(self) -> list[Demonstration]:
        return sorted(self._demos.values(), key=lambda d: d.demo_id)

    def model(self, model_id: str) -> ModelRecord:
        try:
            return self._models[model_id]
        except KeyError:
            raise UnknownModelError(model_id) from None

    def demo(self, demo_id: str) -> Demonstration:
        return self._demos[demo_id]

    def model_ids_by_token_index(self) -> list[str]:
        return [m.model_id for m in self.models]

    def resolve_name(self, name: str) -> ModelRecord | None:
        """Exact id match first, then case-insensitive display name."""
        if name in self._models:
            return self._models[name]
        lowered = name.strip().lower()
        for m in self.models:
            if m.display_name.strip().lower() == lowered:
                return m
        return None

    def demos_for(self, model_id: str, limit: int | None = None) -> list[Demonstration]:
        """Demonstrations for a model, best feedback first.

        Ordering is total: quality sum descending, then demo_id ascending.
        """
        if model_id not in self._models:
            raise UnknownModelError(model_id)
        if limit is not None and limit < 0:
            raise ValidationError("limit must be >= 0")
        demos = [self._demos[i] for i in self._demos_by_model[model_id]]
        demos.sort(key=lambda d: (-d.quality, d.demo_id))
        return demos if limit is None else demos[:limit]


def compute_default_args(
    demos: Sequence[Demonstration], schema: ArgumentSchema
) -> ArgumentSet:
    """Per-field mode over a model's demonstrations; ties fall back to the
    schema default. Used at ingestion to precompute each model's defaults."""
    schema_defaults = schema.defaults()
    out: ArgumentSet = {}
    for name in schema.names:
        counts = Counter(schema.fields[name].coerce(d.args[name]) for d in demos if name in d.args)
        if not counts:
            out[name] = schema_defaults[name]
            continue
        ranked = counts.most_common()
        top = ranked[0][1]
        if len(ranked) > 1 and ranked[1][1] == top:
            out[name] = schema_defaults[name]
        else:
            out[name] = ranked[0][0]
    return schema.validate(out)


def build_registry(
    demos: Sequence[Demonstration],
    schema: ArgumentSchema | None = None,
    descriptions: Mapping[str, str] | None = None,
    display_names: Mapping[str, str] | None = None,
    base_families: Mapping[str, str] | None = None,
) -> ModelRegistry:
    """Construct a registry from exported demonstration records.

    Token indices are assigned by sorted model_id; default arguments are the
    per-field mode of each model's demonstrations.
    """
    schema = schema or default_schema()
    by_model: dict[str, list[Demonstration]] = {}
    for d in demos:
        by_model.setdefault(d.model_id, []).append(d)
    models = []
    for idx, model_id in enumerate(sorted(by_model)):
        group = by_model[model_id]
        models.append(
            ModelRecord(
                model_id=model_id,
                display_name=(display_names or {}).get(model_id, model_id),
                description=(descriptions or {}).get(model_id, ""),
                base_family=(base_families or {}).get(model_id, "sd15"),
                token_index=idx,
                default_args=compute_default_args(group, schema),
                demo_ids=tuple(sorted(d.demo_id for d in group)),
            )
        )
    return ModelRegistry(models, demos, schema)


def load_registry(
    registry_path: str | os.PathLike,
    demos_path: str | os.PathLike | None = None,
    schema: ArgumentSchema | None = None,
) -> ModelRegistry:
    """Load and validate the model registry (and its demonstration store).

    Raises DataFormatError with a line number on parse problems and
    ValidationError on invariant violations (duplicate ids, broken
    token_index bijection, dangling demo ids).
    """
    models = []
    for lineno, obj in read_records(registry_path, "registry"):
        try:
            models.append(ModelRecord.from_json(obj))
        except (KeyError, ValidationError, TypeError) as exc:
            raise DataFormatError(f"bad model record: {exc}", path=str(registry_path), line=lineno)
    demos = []
    if demos_path is not None:
        demos = load_demos(demos_path)
    return ModelRegistry(models, demos, schema)


def load_demos(path: str | os.PathLike) -> list[Demonstration]:
    demos = []
    for lineno, obj in read_records(path, "demos"):
        try:
            demos.append(Demonstration.from_json(obj))
        except (KeyError, ValidationError, TypeError) as exc:
            raise DataFormatError(f"bad demonstration: {exc}", path=str(path), line=lineno)
    return demos


def save_registry(registry: ModelRegistry, registry_path: str | os.PathLike,
                  demos_path: str | os.PathLike | None = None) -> None:
    write_records(registry_path, "registry", (m.to_json() for m in registry.models))
    if demos_path is not None:
        write_records(demos_path, "demos", (d.to_json() for d in registry.demos))


# ---------------------------------------------------------------------------
# benchmark files


def load_benchmark(
    path: str | os.PathLike, registry: ModelRegistry | None = None
) -> list[BenchmarkSample]:
    """Load benchmark samples; the empty file (header only) yields []."""
    samples: list[BenchmarkSample] = []
    seen: set[str] = set()
    for lineno, obj in read_records(path, "bench"):
        try:
            sample = BenchmarkSample.from_json(obj)
        except (KeyError, ValidationError, TypeError) as exc:
            raise DataFormatError(f"bad sample: {exc}", path=str(path), line=lineno)
        if sample.sample_id in seen:
            raise DataFormatError(
                f"duplicate sample_id {sample.sample_id!r}", path=str(path), line=lineno
            )
        seen.add(sample.sample_id)
        if registry is not None and sample.gt_model_id not in registry:
            raise DataFormatError(
                f"sample {sample.sample_id}: unknown gt_model_id {sample.gt_model_id!r}",
                path=str(path),
                line=lineno,
            )
        samples.append(sample)
    return samples


def append_samples(path: str | os.PathLike, samples: Sequence[BenchmarkSample]) -> int:
    """Append validated samples; load(append(x)) round-trips to x."""
    return append_records(path, "bench", (s.to_json() for s in samples))
