"""Evaluation metrics: step-wise scores, FID math, unified score, reports.

Step-wise metrics grade each pipeline stage against benchmark ground truth:
greedy embedding-match F1 for prompts, exact-id accuracy for selection,
per-field match rate for arguments. Image-side quality uses Frechet
distance over feature Gaussians plus pluggable per-image scorers, folded
into one unified score by min-max normalization across the systems in a
report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np

from .argschema import ArgumentSchema, ArgumentSet
from .datastore import BenchmarkSample
from .errors import ValidationError
from .pipeline import StepwiseTrace

_EIG_FLOOR = 1e-10
_PSD_TOL = -1e-8


class TokenEmbedder(Protocol):
    """Per-token embeddings for greedy matching."""

    id: str

    def embed_tokens(self, text: str) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# prompt similarity


@dataclass(frozen=True)
class PromptScore:
    precision: float
    recall: float
    f1: float


def greedy_match_scores(cand: np.ndarray, ref: np.ndarray) -> PromptScore:
    """Greedy max-similarity matching over unit-norm token embeddings.

    Precision averages each candidate token's best match in the reference;
    recall is the mirror; F1 is their harmonic mean.
    """
    if cand.ndim != 2 or ref.ndim != 2 or cand.shape[1] != ref.shape[1]:
        raise ValidationError("token embedding matrices must be 2-D with equal dims")
    if cand.shape[0] == 0 or ref.shape[0] == 0:
        raise ValidationError("empty text")
    sim = cand @ ref.T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    denom = precision + recall
    f1 = 2 * precision * recall / denom if denom > 0 else 0.0
    return PromptScore(precision=precision, recall=recall, f1=f1)


def prompt_score(candidate: str, reference: str, embedder: TokenEmbedder) -> PromptScore:
    return greedy_match_scores(embedder.embed_tokens(candidate),
                               embedder.embed_tokens(reference))


# ---------------------------------------------------------------------------
# selection / configuration accuracy


def selection_accuracy(preds: Sequence[str | None], gts: Sequence[str]) -> float:
    if len(preds) != len(gts):
        raise ValidationError(f"length mismatch: {len(preds)} predictions vs {len(gts)} truths")
    if not gts:
        raise ValidationError("empty prediction lists")
    return sum(p == g for p, g in zip(preds, gts)) / len(gts)


def config_accuracy(pred: ArgumentSet, gt: ArgumentSet, schema: ArgumentSchema) -> float:
    pred = schema.validate(pred)
    gt = schema.validate(gt)
    hits = sum(schema.matches(pred[name], gt[name], name) for name in schema.names)
    return hits / len(schema.names)


# ---------------------------------------------------------------------------
# FID


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValidationError("mean must be 1-D and cov k x k")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)

    @property
    def dim(self) -> int:
        return int(self.mean.size)


def gaussian_stats(features: Sequence[np.ndarray] | np.ndarray) -> GaussianStats:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("features must be a list of equal-length vectors")
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 feature vectors")
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianStats(mean=mean, cov=cov)


def _psd_sqrt(M: np.ndarray, label: str) -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix via eigendecomposition."""
    w, V = np.linalg.eigh((M + M.T) / 2.0)
    if w.min() < _PSD_TOL:
        raise ValidationError(f"{label}: eigenvalue {w.min():.3e} below tolerance")
    w = np.where(w < _EIG_FLOOR, 0.0, w)
    return (V * np.sqrt(w)) @ V.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussians:
    ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)."""
    if a.dim != b.dim:
        raise ValidationError(f"dimension mismatch: {a.dim} vs {b.dim}")
    sqrt_a = _psd_sqrt(a.cov, "cov a")
    inner = _psd_sqrt(sqrt_a @ b.cov @ sqrt_a, "cross term")
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    value = mean_term + float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(inner))
    if value < _PSD_TOL:
        raise ValidationError(f"FID {value:.3e} below zero beyond tolerance")
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# unified score


def unified(rows: dict[str, dict[str, float]]) -> dict[str, float]:
    """Min-max normalize fid/clip/hps/reward across systems and average
    (FID flipped: lower is better). Degenerate columns normalize to 0.5."""
    if not rows:
        raise ValidationError("need at least one system row")
    metrics = ("fid", "clip", "hps", "reward")
    for system, row in rows.items():
        for name in metrics:
            if name not in row or not math.isfinite(row[name]):
                raise ValidationError(f"{system}: metric {name} missing or non-finite")

    norms: dict[str, dict[str, float]] = {name: {} for name in metrics}
    for name in metrics:
        values = [rows[s][name] for s in rows]
        lo, hi = min(values), max(values)
        for system in rows:
            if hi == lo:
                norms[name][system] = 0.5
            else:
                norms[name][system] = (rows[system][name] - lo) / (hi - lo)
    return {
        system: (
            (1.0 - norms["fid"][system])
            + norms["clip"][system]
            + norms["hps"][system]
            + norms["reward"][system]
        ) / 4.0
        for system in rows
    }


# ---------------------------------------------------------------------------
# corpus evaluation


@dataclass
class ScorerBundle:
    """Optional image-side backends: per-image scalar scorers plus a
    feature extractor and reference stats for FID."""

    clip: Callable[[str], float] | None = None
    hps: Callable[[str], float] | None = None
    reward: Callable[[str], float] | None = None
    features: Callable[[str], np.ndarray] | None = None
    reference: GaussianStats | None = None


@dataclass
class SystemRow:
    system_id: str
    n_samples: int
    n_failed: int
    prompt_score_mean: float
    selection_acc: float
    config_acc: float
    fid: float | None = None
    clip: float | None = None
    hps: float | None = None
    reward: float | None = None
    unified: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "system_id": self.system_id,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "prompt_score": self.prompt_score_mean,
            "selection_acc": self.selection_acc,
            "config_acc": self.config_acc,
            "fid": self.fid,
            "clip": self.clip,
            "hps": self.hps,
            "reward": self.reward,
            "unified": self.unified,
        }


@dataclass
class MetricReport:
    rows: list[SystemRow]
    embedder_id: str
    config: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "rows": [row.to_json() for row in self.rows],
            "normalization_population": [row.system_id for row in self.rows],
            "embedder_id": self.embedder_id,
            "config": self.config,
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def evaluate_run(
    traces: Iterable[StepwiseTrace],
    benchmark: Sequence[BenchmarkSample],
    embedder: TokenEmbedder,
    scorers: ScorerBundle | None = None,
    *,
    schema: ArgumentSchema,
    system_id: str | None = None,
) -> SystemRow:
    """Grade one system's traces against benchmark ground truth.

    Failed traces score 0 on every step metric: a failure is a wrong
    answer, not a skipped sample. Image metrics appear only when the
    matching scorer backend is configured and jobs completed.
    """
    by_id = {s.sample_id: s for s in benchmark}
    traces = list(traces)
    if not traces:
        raise ValidationError("no traces to evaluate")

    prompt_f1s: list[float] = []
    sel_hits: list[float] = []
    cfg_scores: list[float] = []
    digests: list[str] = []
    n_failed = 0
    for trace in traces:
        if trace.sample_id is None or trace.sample_id not in by_id:
            raise ValidationError(f"trace {trace.trace_id} has no matching benchmark sample")
        sample = by_id[trace.sample_id]
        if trace.failed or trace.rewritten_prompt is None or trace.args is None:
            n_failed += 1
            prompt_f1s.append(0.0)
            sel_hits.append(0.0)
            cfg_scores.append(0.0)
            continue
        prompt_f1s.append(prompt_score(trace.rewritten_prompt, sample.gt_prompt, embedder).f1)
        pred_model = trace.selection.model_id if trace.selection else None
        sel_hits.append(1.0 if pred_model == sample.gt_model_id else 0.0)
        cfg_scores.append(config_accuracy(trace.args, sample.gt_args, schema))
        job = trace.image_job
        if job is not None and job.status == "done" and job.image_digest:
            digests.append(job.image_digest)

    row = SystemRow(
        system_id=system_id or traces[0].mode,
        n_samples=len(traces),
        n_failed=n_failed,
        prompt_score_mean=float(np.mean(prompt_f1s)),
        selection_acc=float(np.mean(sel_hits)),
        config_acc=float(np.mean(cfg_scores)),
    )

    if scorers is not None and digests:
        if scorers.clip is not None:
            row.clip = float(np.mean([scorers.clip(d) for d in digests]))
        if scorers.hps is not None:
            row.hps = float(np.mean([scorers.hps(d) for d in digests]))
        if scorers.reward is not None:
            row.reward = float(np.mean([scorers.reward(d) for d in digests]))
        if scorers.features is not None and scorers.reference is not None and len(digests) >= 2:
            stats = gaussian_stats([scorers.features(d) for d in digests])
            row.fid = fid(stats, scorers.reference)
    return row


def build_report(
    rows: Sequence[SystemRow],
    embedder_id: str,
    config: dict[str, Any] | None = None,
) -> MetricReport:
    """Assemble rows into a report; the unified column appears only when
    every row carries all four image metrics (the normalization population
    must be complete)."""
    rows = list(rows)
    if not rows:
        raise ValidationError("report needs at least one system row")
    complete = all(
        row.fid is not None and row.clip is not None
        and row.hps is not None and row.reward is not None
        for row in rows
    )
    if complete:
        raw = {
            row.system_id: {"fid": row.fid, "clip": row.clip,
                            "hps": row.hps, "reward": row.reward}
            for row in rows
        }
        scores = unified(raw)  # type: ignore[arg-type]
        for row in rows:
            row.unified = scores[row.system_id]
    return MetricReport(rows=rows, embedder_id=embedder_id, config=config or {})
