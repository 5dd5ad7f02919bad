"""Image generation backends and the content-addressed image store.

The mock renderer makes the whole pipeline runnable offline: it fills a
width x height buffer from a PRNG seeded by the digest of (model_id,
prompt, canonical args), so the same request always produces byte-identical
PNG bytes and changing any argument changes the image.
"""

from __future__ import annotations

import hashlib
import io
import json
import time
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np
from PIL import Image

from .argschema import ArgumentSet
from .errors import RenderError


def render_key(model_id: str, prompt: str, args: ArgumentSet) -> str:
    """Canonical digest of one render request."""
    payload = json.dumps(
        {"model_id": model_id, "prompt": prompt, "args": args},
        sort_keys=True, separators=(",", ":"), ensure_ascii=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Renderer(Protocol):
    id: str

    def render(self, model_id: str, prompt: str, args: ArgumentSet) -> bytes:
        """Return PNG bytes for the request."""
        ...


class MockRenderer:
    """Seeded-noise PNG generator; pure function of the render key."""

    id = "mock-renderer"

    def render(self, model_id: str, prompt: str, args: ArgumentSet) -> bytes:
        key = render_key(model_id, prompt, args)
        width = int(args.get("width", 512))
        height = int(args.get("height", 512))
        seed = int.from_bytes(bytes.fromhex(key[:16]), "big")
        rng = np.random.default_rng(seed)
        pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        img = Image.fromarray(pixels, mode="RGB")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()


class RemoteRenderer:
    """Submit-and-poll client for an HTTP generation service."""

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 30.0,
        poll_interval: float = 0.5,
        poll_budget: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.id = f"remote-renderer:{base_url}"
        self.poll_interval = poll_interval
        self.poll_budget = poll_budget
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), timeout=timeout, transport=transport
        )

    def render(self, model_id: str, prompt: str, args: ArgumentSet) -> bytes:
        try:
            resp = self._client.post(
                "/generate", json={"model_id": model_id, "prompt": prompt, "args": args}
            )
            resp.raise_for_status()
            job_id = resp.json()["job_id"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise RenderError(f"render submit failed: {exc}") from exc

        deadline = time.monotonic() + self.poll_budget
        while time.monotonic() < deadline:
            try:
                poll = self._client.get(f"/jobs/{job_id}")
            except httpx.HTTPError as exc:
                raise RenderError(f"render poll failed: {exc}") from exc
            if poll.status_code >= 400:
                raise RenderError(f"render job {job_id}: HTTP {poll.status_code}")
            if poll.headers.get("content-type", "").startswith("image/"):
                return poll.content
            status = poll.json().get("status")
            if status == "failed":
                raise RenderError(f"render job {job_id} failed remotely")
            time.sleep(self.poll_interval)
        raise RenderError(f"render job {job_id} timed out after {self.poll_budget}s")

    def close(self) -> None:
        self._client.close()


class ImageStore:
    """Directory of PNGs keyed by the sha256 of their bytes."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, png: bytes) -> str:
        digest = hashlib.sha256(png).hexdigest()
        path = self.root / f"{digest}.png"
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(png)
            tmp.replace(path)
        return digest

    def path(self, digest: str) -> Path:
        return self.root / f"{digest}.png"

    def get(self, digest: str) -> bytes:
        path = self.path(digest)
        if not path.exists():
            raise RenderError(f"no stored image for digest {digest}")
        return path.read_bytes()

    def __contains__(self, digest: str) -> bool:
        return self.path(digest).exists()
