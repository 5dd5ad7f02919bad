import hashlib
import io
import itertools

import httpx
import pytest
from PIL import Image

from chat2img.errors import RenderError
from chat2img.render import ImageStore, MockRenderer, RemoteRenderer, render_key


def test_render_key_is_canonical():
    a = render_key("m", "prompt", {"steps": 20, "cfg_scale": 7.0})
    b = render_key("m", "prompt", {"cfg_scale": 7.0, "steps": 20})
    assert a == b
    assert len(a) == 64
    assert a != render_key("m", "prompt", {"steps": 21, "cfg_scale": 7.0})
    assert a != render_key("m2", "prompt", {"steps": 20, "cfg_scale": 7.0})
    assert a != render_key("m", "prompt!", {"steps": 20, "cfg_scale": 7.0})


def test_mock_renderer_deterministic_and_valid_png():
    r = MockRenderer()
    args = {"width": 64, "height": 48, "steps": 20}
    png1 = r.render("m", "a fox", args)
    png2 = r.render("m", "a fox", args)
    assert png1 == png2
    img = Image.open(io.BytesIO(png1))
    assert img.size == (64, 48)
    assert img.mode == "RGB"


def test_mock_renderer_argument_sensitivity():
    r = MockRenderer()
    base = {"width": 32, "height": 32, "steps": 20}
    images = [
        r.render("m", "a fox", base),
        r.render("m", "a fox", {**base, "steps": 21}),
        r.render("m", "a wolf", base),
        r.render("m2", "a fox", base),
    ]
    for a, b in itertools.combinations(images, 2):
        assert a != b


# ---------------------------------------------------------------------------
# remote renderer


def _remote(handler, **kw):
    kw.setdefault("poll_interval", 0.0)
    return RemoteRenderer("http://render.test", transport=httpx.MockTransport(handler), **kw)


def test_remote_renderer_polls_until_image():
    polls = {"n": 0}
    png = MockRenderer().render("m", "p", {"width": 16, "height": 16})

    def handler(request):
        if request.url.path == "/generate":
            return httpx.Response(200, json={"job_id": "j1"})
        polls["n"] += 1
        if polls["n"] < 3:
            return httpx.Response(200, json={"status": "running"})
        return httpx.Response(200, content=png, headers={"content-type": "image/png"})

    out = _remote(handler).render("m", "p", {"width": 16, "height": 16})
    assert out == png
    assert polls["n"] == 3


def test_remote_renderer_failed_job():
    def handler(request):
        if request.url.path == "/generate":
            return httpx.Response(200, json={"job_id": "j1"})
        return httpx.Response(200, json={"status": "failed"})

    with pytest.raises(RenderError, match="failed remotely"):
        _remote(handler).render("m", "p", {})


def test_remote_renderer_submit_error():
    def handler(request):
        return httpx.Response(500)

    with pytest.raises(RenderError, match="submit failed"):
        _remote(handler).render("m", "p", {})


def test_remote_renderer_poll_http_error():
    def handler(request):
        if request.url.path == "/generate":
            return httpx.Response(200, json={"job_id": "j9"})
        return httpx.Response(404)

    with pytest.raises(RenderError, match="HTTP 404"):
        _remote(handler).render("m", "p", {})


def test_remote_renderer_times_out():
    def handler(request):
        if request.url.path == "/generate":
            return httpx.Response(200, json={"job_id": "j1"})
        return httpx.Response(200, json={"status": "running"})

    with pytest.raises(RenderError, match="timed out"):
        _remote(handler, poll_budget=0.05).render("m", "p", {})


# ---------------------------------------------------------------------------
# image store


def test_image_store_round_trip(tmp_path):
    store = ImageStore(tmp_path / "images")
    png = MockRenderer().render("m", "p", {"width": 16, "height": 16})
    digest = store.put(png)
    assert digest == hashlib.sha256(png).hexdigest()
    assert digest in store
    assert store.get(digest) == png
    assert store.path(digest).name == f"{digest}.png"


def test_image_store_put_is_idempotent(tmp_path):
    store = ImageStore(tmp_path / "images")
    png = b"\x89PNG fake bytes"
    assert store.put(png) == store.put(png)
    files = list((tmp_path / "images").iterdir())
    assert len(files) == 1


def test_image_store_missing_digest(tmp_path):
    store = ImageStore(tmp_path / "images")
    assert "0" * 64 not in store
    with pytest.raises(RenderError):
        store.get("0" * 64)
