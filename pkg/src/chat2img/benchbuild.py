"""Benchmark construction: role-play chat generation, dedup, filtering,
test split and setting assignment.

The flow turns demonstration records into freestyle chat inputs by asking a
backend to role-play everyday personas, then prunes the result: similarity
dedup within each model, length and colloquialism filters, an optional
LLM-judged tone filter, and a manual review round-trip. The surviving
samples get a per-model test split (most semantically distinct fifth) and a
supervised/few-shot setting tag driven by train-side sample counts.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .datastore import (
    BenchmarkSample,
    ChatInput,
    Demonstration,
    Turn,
    read_records,
    write_records,
)
from .errors import BackendError, DataFormatError, ValidationError
from .llm import ChatBackend
from .metrics import TokenEmbedder, greedy_match_scores

log = logging.getLogger(__name__)

DEDUP_THRESHOLD = 0.8
TEST_FRACTION = 0.2
MAX_TEXT_CHARS = 600
MAX_HISTORY_TURNS = 6
FEWSHOT_K = 5
GENERATION_TEMPERATURE = 0.9


# ---------------------------------------------------------------------------
# roles


@dataclass(frozen=True)
class RoleCard:
    role_id: str
    persona: str
    tone: str = ""

    def __post_init__(self) -> None:
        if not self.role_id or not self.persona:
            raise ValidationError("role cards need role_id and persona")


def default_roles() -> list[RoleCard]:
    """The role deck shipped with the package."""
    source = resources.files("chat2img").joinpath("data/roles.jsonl")
    with resources.as_file(source) as path:
        return load_roles(path)


def load_roles(path: str | Path) -> list[RoleCard]:
    roles = []
    seen: set[str] = set()
    for lineno, obj in read_records(path, "roles"):
        card = RoleCard(role_id=obj["role_id"], persona=obj["persona"],
                        tone=obj.get("tone", ""))
        if card.role_id in seen:
            raise DataFormatError(f"duplicate role_id {card.role_id!r}",
                                  path=str(path), line=lineno)
        seen.add(card.role_id)
        roles.append(card)
    return roles


# ---------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class GenerationJob:
    demo_id: str
    role_id: str
    kind: str  # single | multimodal | history
    backend_id: str = "mock-roleplay"
    temperature: float = GENERATION_TEMPERATURE

    def __post_init__(self) -> None:
        if self.kind not in ("single", "multimodal", "history"):
            raise ValidationError(f"unknown generation kind {self.kind!r}")
        if not 0.0 < self.temperature <= 2.0:
            raise ValidationError(f"temperature {self.temperature} outside (0, 2]")


_SYSTEM_TEXT = (
    "You are a professional user experience designer who plays various "
    "personas to convert complex and professional content for "
    "non-professional users. Please merge the following prompt and model "
    "information into a single freestyle query. Remove any obvious details "
    "that non-professional users would avoid. Make it similar to what "
    "non-professional users may write. The converted query should be "
    "colloquial and as brief as possible."
)


def render_roleplay_prompt(
    role: RoleCard,
    demo: Demonstration,
    model_name: str,
    kind: str,
    examples: Sequence[str] = (),
) -> str:
    """Deterministic system/require/input template for one generation job."""
    if not role.persona or not demo.prompt or not model_name:
        raise ValidationError("role persona, demo prompt and model name must be non-empty")
    if kind == "history":
        want = (
            "Please generate a multi-turn dialogue (USER:/ASSISTANT: lines, "
            "ending with the user) based on the following professional "
            f'prompt "{demo.prompt}" for the model "{model_name}".'
        )
    elif kind == "multimodal":
        want = (
            "Please generate a single text query that refers to an attached "
            f'image, based on the following professional prompt "{demo.prompt}" '
            f'for the model "{model_name}".'
        )
    else:
        want = (
            "Please generate a single text query based on the following "
            f'professional prompt "{demo.prompt}" for the model "{model_name}".'
        )
    parts = [
        f"System: {_SYSTEM_TEXT}",
        f"Require: role={role.role_id}; prompt; model; examples",
        f"Input: You are playing the {role.role_id} ({role.persona}). {want}",
    ]
    if examples:
        joined = "\n".join(f"- {ex}" for ex in examples)
        parts.append(f"You can refer to the following examples:\n{joined}")
    return "\n\n".join(parts)


@dataclass(frozen=True)
class Candidate:
    input: ChatInput
    demo_id: str
    role_id: str


_TURN_LINE = re.compile(r"^(USER|ASSISTANT):\s*(.*)$")


def _parse_history(raw: str) -> list[Turn]:
    turns: list[Turn] = []
    for line in raw.splitlines():
        m = _TURN_LINE.match(line.strip())
        if m and m.group(2).strip():
            turns.append(Turn(role=m.group(1).lower(), text=m.group(2).strip()))
    return turns


def generate_inputs(
    jobs: Sequence[GenerationJob],
    backends: Mapping[str, ChatBackend],
    demos: Mapping[str, Demonstration],
    roles: Mapping[str, RoleCard],
    model_names: Mapping[str, str],
    *,
    examples_per_job: Mapping[str, Sequence[str]] | None = None,
    archive_path: str | Path | None = None,
) -> tuple[list[Candidate], list[dict[str, Any]]]:
    """Run every job; failures are logged and skipped, never raised.

    Returns (candidates, failures); raw backend outputs are archived when
    `archive_path` is given so generation runs can be audited.
    """
    candidates: list[Candidate] = []
    failures: list[dict[str, Any]] = []
    archive: list[dict[str, Any]] = []
    for job in jobs:
        demo = demos.get(job.demo_id)
        role = roles.get(job.role_id)
        backend = backends.get(job.backend_id)
        try:
            if demo is None or role is None or backend is None:
                raise ValidationError(
                    f"job references unknown demo/role/backend "
                    f"({job.demo_id}/{job.role_id}/{job.backend_id})"
                )
            examples = (examples_per_job or {}).get(job.demo_id, ())
            prompt = render_roleplay_prompt(
                role, demo, model_names.get(demo.model_id, demo.model_id),
                job.kind, examples,
            )
            raw = backend.complete(prompt, temperature=job.temperature)
            archive.append({"demo_id": job.demo_id, "role_id": job.role_id,
                            "kind": job.kind, "raw": raw})
            chat = _candidate_input(job.kind, raw, demo)
        except (BackendError, ValidationError) as exc:
            log.warning("generation job (%s, %s) failed: %s", job.demo_id, job.role_id, exc)
            failures.append({"demo_id": job.demo_id, "role_id": job.role_id,
                             "kind": job.kind, "error": str(exc)})
            continue
        candidates.append(Candidate(input=chat, demo_id=job.demo_id, role_id=job.role_id))
    if archive_path is not None:
        write_records(archive_path, "genarchive", archive)
    return candidates, failures


def _candidate_input(kind: str, raw: str, demo: Demonstration) -> ChatInput:
    text = raw.strip()
    if not text:
        raise ValidationError("backend returned empty text")
    if kind == "single":
        return ChatInput.single(text)
    if kind == "multimodal":
        if not demo.image_digest:
            raise ValidationError(f"demo {demo.demo_id} has no image for a multimodal job")
        return ChatInput.multimodal(text, demo.image_digest)
    turns = _parse_history(text)
    if len(turns) < 2 or turns[-1].role != "user":
        raise ValidationError("history output must have >= 2 turns ending with the user")
    return ChatInput(kind="history", turns=tuple(turns))


# ---------------------------------------------------------------------------
# dedup


def similarity(a: str, b: str, embedder: TokenEmbedder) -> float:
    """Greedy embedding-match F1 between two texts."""
    return greedy_match_scores(embedder.embed_tokens(a), embedder.embed_tokens(b)).f1


def dedup(
    candidates: Sequence[Candidate],
    embedder: TokenEmbedder,
    model_of: Mapping[str, str],
    threshold: float = DEDUP_THRESHOLD,
) -> list[Candidate]:
    """Greedy same-model dedup in input order: a candidate is dropped when
    its similarity to any already-kept candidate of the same model exceeds
    the threshold."""
    kept: list[Candidate] = []
    kept_embs: dict[str, list[Any]] = {}
    for cand in candidates:
        model_id = model_of[cand.demo_id]
        emb = embedder.embed_tokens(cand.input.flat_text())
        duplicate = False
        for other in kept_embs.get(model_id, ()):
            if greedy_match_scores(emb, other).f1 > threshold:
                duplicate = True
                break
        if duplicate:
            continue
        kept.append(cand)
        kept_embs.setdefault(model_id, []).append(emb)
    return kept


# ---------------------------------------------------------------------------
# filters


_WORD = re.compile(r"[^\W_]+", re.UNICODE)
_PERSONAL_PRONOUNS = {
    "i", "me", "my", "mine", "myself",
    "we", "us", "our", "ours", "ourselves",
    "you", "your", "yours", "yourself", "yourselves",
}


def is_tag_spam(text: str, run_length: int = 3) -> bool:
    """True when the text contains a run of >= `run_length` consecutive
    comma-separated tag segments (a tag being a segment of at most two
    words) — the shape of prompt-style keyword lists."""
    run = 0
    for segment in text.split(","):
        words = _WORD.findall(segment)
        if 0 < len(words) <= 2:
            run += 1
            if run >= run_length:
                return True
        else:
            run = 0
    return False


def has_personal_pronoun(text: str) -> bool:
    return any(w.lower() in _PERSONAL_PRONOUNS for w in _WORD.findall(text))


def colloquial(text: str) -> bool:
    """The colloquialism heuristic: conversational text addresses someone
    (first/second-person pronouns) and does not read like a tag list."""
    return has_personal_pronoun(text) and not is_tag_spam(text)


def apply_filters(
    samples: Sequence[BenchmarkSample],
    *,
    judge: ChatBackend | None = None,
    max_chars: int = MAX_TEXT_CHARS,
    max_turns: int = MAX_HISTORY_TURNS,
) -> tuple[list[BenchmarkSample], dict[str, int]]:
    """Length filter, colloquialism heuristic and an optional LLM judge.

    A judge failure skips that check for the sample (with a warning) rather
    than dropping it: filters must never fail silently in either direction.
    """
    kept: list[BenchmarkSample] = []
    drops = {"length": 0, "colloquialism": 0, "llm_judge": 0}
    for sample in samples:
        text = sample.input.flat_text()
        if len(text) > max_chars or len(sample.input.turns) > max_turns:
            drops["length"] += 1
            continue
        if not colloquial(text):
            drops["colloquialism"] += 1
            continue
        if judge is not None:
            try:
                verdict = judge.complete(
                    "Does the following read like a casual, natural user request? "
                    f"Answer keep or drop.\n---\n{text}"
                )
            except BackendError as exc:
                log.warning("LLM filter skipped for %s: %s", sample.sample_id, exc)
            else:
                if verdict.strip().lower().startswith("drop"):
                    drops["llm_judge"] += 1
                    continue
        kept.append(sample)
    return kept, drops


def export_review(samples: Sequence[BenchmarkSample], path: str | Path) -> None:
    """Write the manual-verification worksheet (keep defaults to true)."""
    write_records(
        path, "review",
        [{"sample_id": s.sample_id, "text": s.input.flat_text(), "keep": True}
         for s in samples],
    )


def import_review(
    samples: Sequence[BenchmarkSample], path: str | Path
) -> list[BenchmarkSample]:
    decisions: dict[str, bool] = {}
    for _, obj in read_records(path, "review"):
        decisions[obj["sample_id"]] = bool(obj.get("keep", True))
    return [s for s in samples if decisions.get(s.sample_id, True)]


# ---------------------------------------------------------------------------
# split and settings


def split_test(
    samples: Sequence[BenchmarkSample],
    embedder: TokenEmbedder,
    frac: float = TEST_FRACTION,
) -> tuple[list[BenchmarkSample], list[BenchmarkSample]]:
    """Per-model split: the ceil(frac*n) samples with the lowest mean
    similarity to their model-mates become test (most semantically
    distinct); ties break by sample_id; singleton groups go to train."""
    groups: dict[str, list[BenchmarkSample]] = {}
    for sample in samples:
        groups.setdefault(sample.gt_model_id, []).append(sample)

    train: list[BenchmarkSample] = []
    test: list[BenchmarkSample] = []
    for model_id in sorted(groups):
        group = groups[model_id]
        if len(group) < 2:
            train.extend(replace(s, split="train") for s in group)
            continue
        embs = [embedder.embed_tokens(s.input.flat_text()) for s in group]
        n = len(group)
        mean_sims = []
        for i in range(n):
            sims = [greedy_match_scores(embs[i], embs[j]).f1 for j in range(n) if j != i]
            mean_sims.append(sum(sims) / (n - 1))
        n_test = math.ceil(frac * n)
        order = sorted(range(n), key=lambda i: (mean_sims[i], group[i].sample_id))
        test_idx = set(order[:n_test])
        for i, sample in enumerate(group):
            if i in test_idx:
                test.append(replace(sample, split="test"))
            else:
                train.append(replace(sample, split="train"))
    return train, test


def assign_setting(
    test: Sequence[BenchmarkSample],
    train: Sequence[BenchmarkSample],
    k: int = FEWSHOT_K,
) -> list[BenchmarkSample]:
    """Tag each test sample fewshot iff its model has at most k train
    samples, else supervised."""
    counts: dict[str, int] = {}
    for sample in train:
        counts[sample.gt_model_id] = counts.get(sample.gt_model_id, 0) + 1
    return [
        replace(s, setting="fewshot" if counts.get(s.gt_model_id, 0) <= k else "supervised")
        for s in test
    ]


# ---------------------------------------------------------------------------
# manifest


def build_manifest(
    train: Sequence[BenchmarkSample],
    test: Sequence[BenchmarkSample],
    *,
    k: int = FEWSHOT_K,
    dedup_threshold: float = DEDUP_THRESHOLD,
    test_fraction: float = TEST_FRACTION,
    drop_counts: Mapping[str, int] | None = None,
    extra: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    def kind_counts(rows: Sequence[BenchmarkSample]) -> dict[str, int]:
        out = {"single": 0, "multimodal": 0, "history": 0}
        for s in rows:
            out[s.input.kind] += 1
        return out

    setting_counts = {"supervised": 0, "fewshot": 0}
    for s in test:
        setting_counts[s.setting] += 1
    manifest: dict[str, Any] = {
        "total": len(train) + len(test),
        "train": {"total": len(train), "by_kind": kind_counts(train)},
        "test": {"total": len(test), "by_kind": kind_counts(test),
                 "by_setting": setting_counts},
        "fewshot_k": k,
        "dedup_threshold": dedup_threshold,
        "test_fraction": test_fraction,
    }
    if drop_counts:
        manifest["filter_drops"] = dict(drop_counts)
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(path: str | Path, manifest: Mapping[str, Any]) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# end-to-end build


def candidates_to_samples(candidates: Sequence[Candidate],
                          demos: Mapping[str, Demonstration]) -> list[BenchmarkSample]:
    samples = []
    for i, cand in enumerate(candidates):
        demo = demos[cand.demo_id]
        samples.append(BenchmarkSample(
            sample_id=f"{cand.demo_id}-{i:05d}",
            input=cand.input,
            gt_prompt=demo.prompt,
            gt_model_id=demo.model_id,
            gt_args=dict(demo.args),
            split="train",
        ))
    return samples


def build_benchmark(
    jobs: Sequence[GenerationJob],
    backends: Mapping[str, ChatBackend],
    demos: Mapping[str, Demonstration],
    roles: Mapping[str, RoleCard],
    model_names: Mapping[str, str],
    embedder: TokenEmbedder,
    *,
    judge: ChatBackend | None = None,
    k: int = FEWSHOT_K,
    dedup_threshold: float = DEDUP_THRESHOLD,
    test_fraction: float = TEST_FRACTION,
    archive_path: str | Path | None = None,
) -> tuple[list[BenchmarkSample], dict[str, Any]]:
    """Generation -> dedup -> filters -> split -> settings -> manifest."""
    candidates, failures = generate_inputs(
        jobs, backends, demos, roles, model_names, archive_path=archive_path
    )
    model_of = {demo_id: demo.model_id for demo_id, demo in demos.items()}
    deduped = dedup(candidates, embedder, model_of, dedup_threshold)
    samples = candidates_to_samples(deduped, demos)
    filtered, drops = apply_filters(samples, judge=judge)
    train, test = split_test(filtered, embedder, test_fraction)
    test = assign_setting(test, train, k)
    manifest = build_manifest(
        train, test, k=k, dedup_threshold=dedup_threshold,
        test_fraction=test_fraction, drop_counts=drops,
        extra={"generated": len(candidates), "generation_failures": len(failures),
               "dedup_dropped": len(candidates) - len(deduped)},
    )
    return train + test, manifest
