"""Model selection through trainable model-token embeddings.

Each candidate model owns one extra vocabulary row appended to a frozen
word-embedding head. Selection is next-token prediction over the
concatenated head: softmax([word_rows; model_rows] @ h) for a frozen
feature vector h. Training touches only the model rows, so the base stays
bit-identical and very few parameters move.

Both the loss softmax and the inference softmax use the concatenated head
by default; `include_word_rows=False` restricts the denominator to the
model block for ablation runs.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import FeatureVector
from .errors import CheckpointError, TrainingError, ValidationError

_CKPT_MAGIC = b"C2IHEAD1"


def _as_vector(h: FeatureVector | np.ndarray) -> np.ndarray:
    v = h.values if isinstance(h, FeatureVector) else np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValidationError("feature vector has non-finite entries")
    return v


@dataclass
class TokenHead:
    """Frozen word rows plus trainable model rows, both (rows x dim)."""

    word_rows: np.ndarray
    model_rows: np.ndarray
    model_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        self.word_rows = np.ascontiguousarray(self.word_rows, dtype=np.float64)
        self.model_rows = np.ascontiguousarray(self.model_rows, dtype=np.float64)
        if self.word_rows.ndim != 2 or self.model_rows.ndim != 2:
            raise ValidationError("head matrices must be 2-D")
        if self.word_rows.shape[1] != self.model_rows.shape[1]:
            raise ValidationError("word and model rows must share the embedding dimension")
        if self.model_ids is not None and len(self.model_ids) != self.model_rows.shape[0]:
            raise ValidationError("model_ids length must match model row count")

    @property
    def num_words(self) -> int:
        return int(self.word_rows.shape[0])

    @property
    def num_models(self) -> int:
        return int(self.model_rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.word_rows.shape[1])

    def word_digest(self) -> bytes:
        return hashlib.sha256(self.word_rows.astype("<f8").tobytes(order="C")).digest()


def synth_word_rows(num_words: int, dim: int, seed: int) -> np.ndarray:
    """Frozen random word block for runs without a real embedding table.

    Kept separate from init_head so the same word rows can be regenerated
    from config when a checkpoint is reloaded.
    """
    if num_words <= 0 or dim <= 0:
        raise ValidationError("num_words and dim must be positive")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((num_words, dim)) / np.sqrt(dim)


def init_head(
    num_models: int,
    dim: int,
    seed: int,
    word_rows: np.ndarray | None = None,
    *,
    num_words: int = 32,
    model_ids: Sequence[str] | None = None,
) -> TokenHead:
    """Build a head with seeded Gaussian model rows scaled by 1/sqrt(dim).

    When `word_rows` is omitted, a frozen random word block of `num_words`
    rows is synthesized from the same seed, so toy runs are reproducible
    end to end.
    """
    if num_models <= 0 or dim <= 0:
        raise ValidationError("num_models and dim must be positive")
    rng = np.random.default_rng(seed)
    if word_rows is None:
        if num_words <= 0:
            raise ValidationError("num_words must be positive")
        word_rows = rng.standard_normal((num_words, dim)) / np.sqrt(dim)
    model_rows = rng.standard_normal((num_models, dim)) / np.sqrt(dim)
    ids = tuple(model_ids) if model_ids is not None else None
    return TokenHead(word_rows=np.asarray(word_rows, dtype=np.float64),
                     model_rows=model_rows, model_ids=ids)


# ---------------------------------------------------------------------------
# loss and gradient


def _batch_loss_grad(
    head: TokenHead, H: np.ndarray, targets: np.ndarray, include_word_rows: bool
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the model rows only."""
    B = H.shape[0]
    logits_m = H @ head.model_rows.T  # (B, M)
    if include_word_rows:
        logits = np.concatenate([H @ head.word_rows.T, logits_m], axis=1)
        offset = head.num_words
    else:
        logits = logits_m
        offset = 0
    if not np.all(np.isfinite(logits)):
        raise TrainingError("non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    denom = expz.sum(axis=1, keepdims=True)
    log_probs = z - np.log(denom)
    rows = np.arange(B)
    loss = float(-log_probs[rows, offset + targets].mean())
    probs_model = expz[:, offset:] / denom  # softmax restricted to model columns
    G = probs_model.copy()
    G[rows, targets] -= 1.0
    grad = G.T @ H / B
    return loss, grad


def loss_and_grad(
    head: TokenHead,
    h: FeatureVector | np.ndarray,
    target: int,
    *,
    include_word_rows: bool = True,
) -> tuple[float, np.ndarray]:
    """Cross-entropy of predicting model token `target` for features `h`.

    Returns (loss, gradient) where the gradient covers the model rows only;
    word rows never receive gradient.
    """
    if not 0 <= target < head.num_models:
        raise ValidationError(f"target {target} outside model block 0..{head.num_models - 1}")
    v = _as_vector(h)
    return _batch_loss_grad(head, v[None, :], np.array([target]), include_word_rows)


def dataset_loss(
    head: TokenHead,
    dataset: Sequence[tuple[FeatureVector | np.ndarray, int]],
    *,
    include_word_rows: bool = True,
) -> float:
    H = np.stack([_as_vector(h) for h, _ in dataset])
    y = np.array([t for _, t in dataset])
    loss, _ = _batch_loss_grad(head, H, y, include_word_rows)
    return loss


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    weight_decay: float
    epochs: int
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adamw"
    include_word_rows: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def paper_preset(cls, seed: int = 0) -> "TrainConfig":
        """Hyperparameters tuned for full-scale training runs."""
        return cls(learning_rate=4e-5, weight_decay=1.0, epochs=5, seed=seed)

    @classmethod
    def toy_preset(cls, seed: int = 0) -> "TrainConfig":
        """Hyperparameters for desk-scale synthetic data."""
        return cls(learning_rate=1e-2, weight_decay=0.01, epochs=50, seed=seed)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    holdout_accuracy: float | None = None
    steps: int = 0


def train(
    head: TokenHead,
    dataset: Sequence[tuple[FeatureVector | np.ndarray, int]],
    config: TrainConfig,
    holdout: Sequence[tuple[FeatureVector | np.ndarray, int]] | None = None,
) -> TrainReport:
    """Train the model rows in place; word rows are never touched.

    Deterministic for a fixed config seed: the per-epoch shuffle order and
    the reduction order inside a batch are both fixed. Raises TrainingError
    with the epoch/batch position if the loss goes non-finite.
    """
    if not dataset:
        raise ValidationError("dataset must be non-empty")
    H = np.stack([_as_vector(h) for h, _ in dataset])
    y = np.array([t for _, t in dataset], dtype=np.int64)
    if y.min() < 0 or y.max() >= head.num_models:
        raise ValidationError("dataset targets outside the model block")

    report = TrainReport()
    if config.epochs == 0:
        if holdout:
            report.holdout_accuracy = _accuracy(head, holdout, config.include_word_rows)
        return report

    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    lr, wd = config.learning_rate, config.weight_decay
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(head.model_rows)
    v = np.zeros_like(head.model_rows)
    t = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad = _batch_loss_grad(head, H[idx], y[idx], config.include_word_rows)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training diverged: non-finite loss at epoch {epoch}, step {t}"
                )
            loss_sum += loss * len(idx)
            t += 1
            if config.optimizer == "adamw":
                m = beta1 * m + (1 - beta1) * grad
                v = beta2 * v + (1 - beta2) * grad * grad
                m_hat = m / (1 - beta1**t)
                v_hat = v / (1 - beta2**t)
                head.model_rows -= lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * head.model_rows)
            else:
                head.model_rows -= lr * (grad + wd * head.model_rows)
        report.epoch_losses.append(loss_sum / n)
        report.steps = t

    if holdout:
        report.holdout_accuracy = _accuracy(head, holdout, config.include_word_rows)
    return report


def _accuracy(
    head: TokenHead,
    pairs: Sequence[tuple[FeatureVector | np.ndarray, int]],
    include_word_rows: bool,
) -> float:
    correct = 0
    for h, target in pairs:
        sel = select(head, h, include_word_rows=include_word_rows)
        correct += int(sel.model_index == target)
    return correct / len(pairs)


# ---------------------------------------------------------------------------
# inference


@dataclass(frozen=True)
class Selection:
    """Outcome of one selection step.

    `model_index` is the winning row in the model block (None only in
    unconstrained mode when a word token wins); `full_probs` covers the
    concatenated head, `model_block_probs` the renormalized model block.
    """

    model_index: int | None
    model_id: str | None
    full_probs: np.ndarray
    model_block_probs: np.ndarray
    mode: str
    no_model: bool = False

    @property
    def probability(self) -> float | None:
        if self.model_index is None:
            return None
        return float(self.model_block_probs[self.model_index])


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def select(
    head: TokenHead,
    h: FeatureVector | np.ndarray,
    mode: str = "constrained",
    *,
    include_word_rows: bool = True,
) -> Selection:
    """Select a model for features `h`.

    Constrained mode takes the argmax over the model block only, so a model
    is always chosen; ties break to the lowest token index. Unconstrained
    mode takes the argmax over the whole head and flags `no_model` when a
    word token wins, still reporting the model-block distribution.
    """
    if mode not in ("constrained", "unconstrained"):
        raise ValidationError(f"unknown selection mode {mode!r}")
    v = _as_vector(h)
    logits_w = head.word_rows @ v
    logits_m = head.model_rows @ v
    if include_word_rows:
        full = np.concatenate([logits_w, logits_m])
    else:
        full = logits_m
    if not np.all(np.isfinite(full)):
        raise ValidationError("non-finite logits")
    full_probs = _softmax(full)
    block_probs = _softmax(logits_m)

    offset = head.num_words if include_word_rows else 0
    if mode == "constrained":
        idx = int(np.argmax(logits_m))  # first max wins: lowest token index
        no_model = False
    else:
        top = int(np.argmax(full))
        if top < offset:
            return Selection(None, None, full_probs, block_probs, mode, no_model=True)
        idx = top - offset
        no_model = False
    model_id = head.model_ids[idx] if head.model_ids else None
    return Selection(idx, model_id, full_probs, block_probs, mode, no_model=no_model)


# ---------------------------------------------------------------------------
# checkpoints


def save_head(head: TokenHead, path: str | Path) -> str:
    """Write dimensions, model rows (row-major float64) and the digest of
    the frozen word rows. Returns the hex digest of the checkpoint bytes."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    payload = bytearray()
    payload += _CKPT_MAGIC
    payload += struct.pack("<QQQ", head.num_words, head.num_models, head.dim)
    payload += head.model_rows.astype("<f8").tobytes(order="C")
    payload += head.word_digest()
    p.write_bytes(bytes(payload))
    return hashlib.sha256(bytes(payload)).hexdigest()


def load_head(
    path: str | Path,
    word_rows: np.ndarray,
    model_ids: Sequence[str] | None = None,
) -> TokenHead:
    """Load model rows and verify the frozen base has not drifted."""
    raw = Path(path).read_bytes()
    if raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(_CKPT_MAGIC)
    num_words, num_models, dim = struct.unpack_from("<QQQ", raw, off)
    off += struct.calcsize("<QQQ")
    n_bytes = num_models * dim * 8
    block = raw[off : off + n_bytes]
    if len(block) != n_bytes:
        raise CheckpointError(f"{path}: truncated model rows")
    off += n_bytes
    stored_digest = raw[off : off + 32]
    if len(stored_digest) != 32:
        raise CheckpointError(f"{path}: missing word-row digest")

    word_rows = np.ascontiguousarray(word_rows, dtype=np.float64)
    if word_rows.shape != (num_words, dim):
        raise CheckpointError(
            f"{path}: word rows shape {word_rows.shape} != stored ({num_words}, {dim})"
        )
    actual = hashlib.sha256(word_rows.astype("<f8").tobytes(order="C")).digest()
    if actual != stored_digest:
        raise CheckpointError(f"{path}: frozen word rows drifted since this checkpoint was saved")
    model_rows = np.frombuffer(block, dtype="<f8").reshape(num_models, dim).copy()
    ids = tuple(model_ids) if model_ids is not None else None
    return TokenHead(word_rows=word_rows, model_rows=model_rows, model_ids=ids)
