"""Feature encoders for (chat input, prompt) pairs.

The hashing encoder is a deterministic desk-scale stand-in for a frozen
language-model trunk: it lowercases, splits on whitespace and punctuation,
hashes unigrams and bigrams into 4096 buckets with 64-bit FNV-1a, projects
the bucket counts through a fixed seeded Gaussian matrix, and L2-normalizes.
Same text, same seed, same vector - bit for bit.

A remote HTTP backend covers real embedding services; it shares the
normalization contract but is not deterministic across providers.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .datastore import ChatInput
from .errors import BackendError, EncodingError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation and underscores split tokens."""
    return _TOKEN_RE.findall(text.lower())


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class FeatureVector:
    """Unit-norm feature vector of fixed dimension."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise EncodingError("feature vector has non-finite entries")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-9:
            raise EncodingError(f"feature vector norm {norm} is not 1")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class Encoder(Protocol):
    id: str
    dim: int
    deterministic: bool

    def encode(self, chat_input: ChatInput, prompt: str = "") -> FeatureVector: ...

    def encode_text(self, text: str) -> FeatureVector: ...


class HashingEncoder:
    """Deterministic hashing encoder; a pure function of (text, image digest,
    seed, dim)."""

    def __init__(self, dim: int = 64, seed: int = 1234, buckets: int = 4096):
        if dim <= 0 or buckets <= 0:
            raise EncodingError("dim and buckets must be positive")
        self.dim = dim
        self.seed = seed
        self.buckets = buckets
        self.deterministic = True
        self.id = f"hash-{dim}d-{buckets}b-seed{seed}"
        rng = np.random.default_rng(seed)
        # fixed projection, drawn once per (seed, dim, buckets)
        self._proj = rng.standard_normal((dim, buckets))

    def _bucket(self, token: str) -> int:
        return fnv1a64(token.encode("utf-8")) % self.buckets

    def _counts(self, stream: Sequence[str]) -> np.ndarray:
        counts = np.zeros(self.buckets, dtype=np.float64)
        for tok in stream:
            counts[self._bucket(tok)] += 1.0
        for a, b in zip(stream, stream[1:]):
            counts[self._bucket(a + " " + b)] += 1.0
        return counts

    def _project(self, counts: np.ndarray) -> FeatureVector:
        h = self._proj @ counts
        norm = float(np.linalg.norm(h))
        if norm == 0.0:
            raise EncodingError("empty input")
        return FeatureVector(h / norm)

    def encode_text(self, text: str) -> FeatureVector:
        toks = tokenize(text)
        if not toks:
            raise EncodingError("empty input")
        return self._project(self._counts(toks))

    def encode(self, chat_input: ChatInput, prompt: str = "") -> FeatureVector:
        """Encode a request plus its rewritten prompt as one feature vector.

        History turns are flattened in order with role markers; an attached
        image contributes its digest to the hash stream, so the same text
        with a different image encodes differently.
        """
        stream: list[str] = []
        content = 0
        for turn in chat_input.turns:
            stream.append(f"<{turn.role}>")
            toks = tokenize(turn.text)
            stream.extend(toks)
            content += len(toks)
        if chat_input.image_ref:
            stream.append(f"<image:{chat_input.image_ref}>")
            content += 1
        ptoks = tokenize(prompt)
        if ptoks:
            stream.append("<prompt>")
            stream.extend(ptoks)
            content += len(ptoks)
        if content == 0:
            raise EncodingError("empty input")
        return self._project(self._counts(stream))

    def embed_tokens(self, text: str) -> np.ndarray:
        """Per-token unit embeddings (n_tokens x dim) for greedy matching."""
        toks = tokenize(text)
        if not toks:
            raise EncodingError("empty input")
        cols = np.stack([self._proj[:, self._bucket(t)] for t in toks])
        norms = np.linalg.norm(cols, axis=1, keepdims=True)
        return cols / norms


class RemoteEncoder:
    """HTTP embedding backend: POST a list of strings, get vectors back.

    The API key is read from an environment variable; requests retry a
    bounded number of times with linear backoff.
    """

    def __init__(
        self,
        base_url: str,
        dim: int,
        *,
        api_key_env: str = "CHAT2IMG_API_KEY",
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        self.id = f"remote-{base_url}"
        self.dim = dim
        self.deterministic = False
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {}
        key = os.environ.get(api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=base_url, timeout=timeout, headers=headers, transport=transport
        )

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        last: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._client.post("/embed", json={"texts": list(texts)})
                if resp.status_code >= 500:
                    last = BackendError(f"embedding backend {resp.status_code}")
                elif resp.status_code >= 400:
                    raise BackendError(f"embedding backend rejected request: {resp.status_code}")
                else:
                    vectors = resp.json()["vectors"]
                    out = []
                    for vec in vectors:
                        arr = np.asarray(vec, dtype=np.float64)
                        if arr.shape != (self.dim,):
                            raise EncodingError(
                                f"backend returned dimension {arr.shape}, expected ({self.dim},)"
                            )
                        norm = float(np.linalg.norm(arr))
                        if norm == 0.0:
                            raise EncodingError("backend returned a zero vector")
                        out.append(arr / norm)
                    return out
            except httpx.HTTPError as exc:
                last = BackendError(f"embedding transport error: {exc}")
            if attempt < self.max_retries - 1:
                time.sleep(self.backoff * (attempt + 1))
        raise last if last else BackendError("embedding backend failed")

    def _serialize(self, chat_input: ChatInput, prompt: str) -> str:
        parts = []
        for turn in chat_input.turns:
            parts.append(f"{turn.role.upper()}: {turn.text}")
        if chat_input.image_ref:
            parts.append(f"[image:{chat_input.image_ref}]")
        if prompt:
            parts.append(f"PROMPT: {prompt}")
        return "\n".join(parts)

    def encode(self, chat_input: ChatInput, prompt: str = "") -> FeatureVector:
        text = self._serialize(chat_input, prompt)
        if not text.strip():
            raise EncodingError("empty input")
        return FeatureVector(self.embed([text])[0])

    def encode_text(self, text: str) -> FeatureVector:
        if not text.strip():
            raise EncodingError("empty input")
        return FeatureVector(self.embed([text])[0])
