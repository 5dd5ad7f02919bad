import time

import numpy as np
import pytest

from chat2img.argconf import ArgConfigurator
from chat2img.datastore import ChatInput
from chat2img.encoders import HashingEncoder
from chat2img.errors import BackendError, RenderError, ValidationError
from chat2img.llm import (
    ArgsEchoMock,
    ConstantBackend,
    DirectTripleMock,
    RewriteEchoMock,
    ScriptedBackend,
)
from chat2img.pipeline import (
    JobStore,
    Pipeline,
    TraceStore,
    load_traces,
    parse_direct_output,
)
from chat2img.render import ImageStore, MockRenderer
from chat2img.rewriter import Rewriter
from chat2img.selector import TokenHead, init_head, select
from chat2img.errors import OutputParseError


class FailingRenderer:
    id = "mock-failing-renderer"

    def render(self, model_id, prompt, args):
        raise RenderError("render backend down")


def _make_pipeline(tmp_path, registry, *, rewrite=None, args_backend=None,
                   direct=None, head=None, renderer=None, workers=0, **kw):
    encoder = HashingEncoder(dim=64, seed=1234)
    ids = tuple(m.model_id for m in registry.models)
    if head is None:
        head = init_head(len(ids), 64, seed=0, model_ids=ids)
    images = ImageStore(tmp_path / "images")
    jobs = JobStore(renderer or MockRenderer(), images, workers=workers)
    traces = TraceStore(tmp_path / "traces.jsonl")
    pipe = Pipeline(
        registry, encoder, head,
        Rewriter(rewrite or RewriteEchoMock()),
        ArgConfigurator(args_backend or ArgsEchoMock(), registry, encoder, k=3),
        jobs, traces,
        direct_backend=direct,
        **kw,
    )
    return pipe, traces, images


# ---------------------------------------------------------------------------
# staged mode


def test_run_evo_happy_path(tmp_path, registry):
    pipe, traces, images = _make_pipeline(tmp_path, registry)
    trace = pipe.run_evo(ChatInput.single("my cat wearing a tiny hat"), sample_id="s-1")

    assert not trace.failed
    assert trace.mode == "evo"
    assert trace.sample_id == "s-1"
    assert trace.rewritten_prompt.endswith(", highly detailed, best quality")
    assert trace.selection.model_id in registry
    assert len(trace.selection.model_block_probs) == len(registry.models)
    assert sum(trace.selection.model_block_probs) == pytest.approx(1.0, abs=1e-9)
    registry.schema.validate(trace.args)
    assert set(trace.durations) == {"rewrite", "select", "configure", "dispatch"}

    assert trace.image_job.status == "done"
    assert trace.image_job.image_digest in images
    assert len(traces) == 1
    assert traces.get(trace.trace_id) is trace


def test_run_evo_persists_before_dispatch(tmp_path, registry):
    pipe, traces, _ = _make_pipeline(tmp_path, registry)
    trace = pipe.run_evo(ChatInput.single("a quiet harbor at dawn"))

    # in memory the inline job already finished ...
    assert trace.image_job.status == "done"
    # ... but the persisted row was written while the job was still queued
    on_disk = load_traces(tmp_path / "traces.jsonl")
    assert len(on_disk) == 1
    assert on_disk[0].trace_id == trace.trace_id
    assert on_disk[0].image_job.status == "queued"
    assert on_disk[0].image_job.job_id == trace.image_job.job_id


def test_run_evo_selection_matches_recompute(tmp_path, registry):
    pipe, _, _ = _make_pipeline(tmp_path, registry)
    chat = ChatInput.single("a castle in the clouds")
    trace = pipe.run_evo(chat)

    h = pipe.encoder.encode(chat, trace.rewritten_prompt)
    sel = select(pipe.head, h, "constrained")
    assert trace.selection.model_id == sel.model_id
    assert trace.selection.probability == pytest.approx(sel.probability, abs=1e-12)


def test_run_evo_rewrite_failure(tmp_path, registry):
    pipe, traces, _ = _make_pipeline(
        tmp_path, registry, rewrite=ScriptedBackend([BackendError("llm down")])
    )
    trace = pipe.run_evo(ChatInput.single("anything"))
    assert trace.failed
    assert trace.failing_stage == "rewrite"
    assert trace.error_kind == "backend"
    assert trace.rewritten_prompt is None
    assert trace.image_job is None
    assert len(traces) == 1  # failures persist too


def test_run_evo_no_model_failure(tmp_path, registry):
    # word logits dominate in both signs, so unconstrained argmax always
    # lands in the word block
    dim = 64
    word = np.vstack([np.eye(dim) * 1000.0, -np.eye(dim) * 1000.0])
    head = TokenHead(
        word_rows=word,
        model_rows=np.zeros((len(registry.models), dim)),
        model_ids=tuple(m.model_id for m in registry.models),
    )
    pipe, traces, _ = _make_pipeline(
        tmp_path, registry, head=head, selection_mode="unconstrained"
    )
    trace = pipe.run_evo(ChatInput.single("a plain request"))
    assert trace.failed
    assert trace.failing_stage == "select"
    assert trace.error_kind == "logic"
    assert "no model token" in trace.error


def test_run_evo_arg_fallback_still_renders(tmp_path, registry):
    pipe, _, _ = _make_pipeline(
        tmp_path, registry, args_backend=ConstantBackend("not a block")
    )
    trace = pipe.run_evo(ChatInput.single("a fallback case"))
    assert not trace.failed
    assert trace.arg_fallback is True
    model = registry.model(trace.selection.model_id)
    assert trace.args == model.default_args
    assert trace.image_job.status == "done"


# ---------------------------------------------------------------------------
# direct-prediction baseline


def test_run_direct_happy_path(tmp_path, registry):
    name = registry.models[0].display_name
    pipe, _, images = _make_pipeline(tmp_path, registry,
                                     direct=DirectTripleMock(name))
    trace = pipe.run_direct(ChatInput.single("my dog on a hill"), sample_id="s-9")

    assert not trace.failed
    assert trace.mode == "direct"
    assert trace.selection.model_id == registry.models[0].model_id
    assert trace.selection.mode == "direct"
    assert trace.selection.model_block_probs == ()
    assert trace.args["steps"] == 30
    model = registry.models[0]
    for key, value in model.default_args.items():
        if key != "steps":
            assert trace.args[key] == value
    assert trace.image_job.status == "done"
    assert trace.image_job.image_digest in images


def test_run_direct_unresolvable_model_fails_without_fallback(tmp_path, registry):
    pipe, traces, _ = _make_pipeline(
        tmp_path, registry, direct=DirectTripleMock("No Such Model 9000"),
        direct_retries=0,
    )
    trace = pipe.run_direct(ChatInput.single("whatever"))
    assert trace.failed
    assert trace.failing_stage == "direct"
    assert "unknown model" in trace.error
    assert trace.error_kind == "logic"
    assert trace.image_job is None  # no fallback dispatch
    assert len(traces) == 1


def test_run_direct_retries_unparseable_output(tmp_path, registry):
    name = registry.models[1].display_name
    good = f"PROMPT: a fixed answer\nMODEL: {name}\n```args\nsteps: 25\n```"
    backend = ScriptedBackend(["garbage with no structure", good])
    pipe, _, _ = _make_pipeline(tmp_path, registry, direct=backend)
    trace = pipe.run_direct(ChatInput.single("x"))
    assert not trace.failed
    assert backend.calls == 2
    assert trace.rewritten_prompt == "a fixed answer"
    assert trace.args["steps"] == 25


def test_run_direct_exhausts_retries(tmp_path, registry):
    backend = ScriptedBackend(["junk"] * 3)
    pipe, _, _ = _make_pipeline(tmp_path, registry, direct=backend, direct_retries=2)
    trace = pipe.run_direct(ChatInput.single("x"))
    assert trace.failed
    assert trace.failing_stage == "direct"
    assert backend.calls == 3
    assert "missing" in trace.error


def test_run_direct_invalid_args_fail(tmp_path, registry):
    name = registry.models[0].display_name
    pipe, _, _ = _make_pipeline(
        tmp_path, registry,
        direct=DirectTripleMock(name, args_lines=("steps: 9000",)),
        direct_retries=0,
    )
    trace = pipe.run_direct(ChatInput.single("x"))
    assert trace.failed
    assert trace.failing_stage == "direct"
    assert "steps" in trace.error
    assert trace.image_job is None


def test_run_direct_requires_backend(tmp_path, registry):
    pipe, _, _ = _make_pipeline(tmp_path, registry)
    with pytest.raises(ValidationError):
        pipe.run_direct(ChatInput.single("x"))


def test_parse_direct_output_names_missing_parts():
    with pytest.raises(OutputParseError, match="PROMPT, MODEL, args block"):
        parse_direct_output("nothing structured")
    with pytest.raises(OutputParseError, match="MODEL"):
        parse_direct_output("PROMPT: p\n```args\n```")
    with pytest.raises(OutputParseError, match="empty PROMPT"):
        parse_direct_output("PROMPT:  \nMODEL: m\n```args\n```")


# ---------------------------------------------------------------------------
# fixed single-model baseline


def test_run_fixed_baseline_uses_configured_model(tmp_path, registry):
    target = registry.models[2].model_id
    pipe, _, _ = _make_pipeline(tmp_path, registry, baseline_model_id=target)
    for chat in (
        ChatInput.single("first request"),
        ChatInput.history([("user", "hi"), ("assistant", "yes?"), ("user", "another")]),
    ):
        trace = pipe.run_fixed_baseline(chat)
        assert not trace.failed
        assert trace.mode == "fixed_baseline"
        assert trace.selection is None  # no selection stage at all
        assert trace.args == registry.model(target).default_args
        assert trace.image_job.status == "done"


def test_run_fixed_baseline_with_explicit_args(tmp_path, registry, schema):
    target = registry.models[0].model_id
    fixed = schema.fill({"steps": 44}, schema.defaults())
    pipe, _, _ = _make_pipeline(
        tmp_path, registry, baseline_model_id=target, baseline_args=fixed
    )
    trace = pipe.run_fixed_baseline(ChatInput.single("x"))
    assert trace.args["steps"] == 44


def test_run_fixed_baseline_requires_model(tmp_path, registry):
    pipe, _, _ = _make_pipeline(tmp_path, registry)
    with pytest.raises(ValidationError):
        pipe.run_fixed_baseline(ChatInput.single("x"))


# ---------------------------------------------------------------------------
# mode dispatcher and wiring validation


def test_run_dispatches_by_mode(tmp_path, registry):
    name = registry.models[0].display_name
    pipe, _, _ = _make_pipeline(
        tmp_path, registry, direct=DirectTripleMock(name),
        baseline_model_id=registry.models[0].model_id,
    )
    assert pipe.run(ChatInput.single("a"), "evo").mode == "evo"
    assert pipe.run(ChatInput.single("b"), "direct").mode == "direct"
    assert pipe.run(ChatInput.single("c"), "fixed_baseline").mode == "fixed_baseline"
    with pytest.raises(ValidationError):
        pipe.run(ChatInput.single("d"), "imaginary")


def test_pipeline_rejects_head_registry_mismatch(tmp_path, registry):
    bad_head = init_head(len(registry.models) + 1, 64, seed=0)
    with pytest.raises(ValidationError, match="head row count"):
        _make_pipeline(tmp_path, registry, head=bad_head)


# ---------------------------------------------------------------------------
# job store


def test_failed_render_marks_job_not_trace(tmp_path, registry):
    pipe, traces, _ = _make_pipeline(tmp_path, registry, renderer=FailingRenderer())
    trace = pipe.run_evo(ChatInput.single("a doomed render"))
    assert not trace.failed  # the pipeline answer is complete
    assert trace.image_job.status == "failed"
    assert "render backend down" in trace.image_job.error
    assert trace.image_job.image_digest is None


def test_job_store_threaded_completion(tmp_path, registry):
    pipe, _, _ = _make_pipeline(tmp_path, registry, workers=2)
    trace = pipe.run_evo(ChatInput.single("a threaded render"))
    deadline = time.monotonic() + 10.0
    while trace.image_job.status in ("queued", "running"):
        assert time.monotonic() < deadline, "job never completed"
        time.sleep(0.01)
    assert trace.image_job.status == "done"
    pipe.jobs.shutdown()


def test_job_store_lookup(tmp_path, registry):
    pipe, _, _ = _make_pipeline(tmp_path, registry)
    trace = pipe.run_evo(ChatInput.single("lookup target"))
    ref = pipe.jobs.get(trace.image_job.job_id)
    assert ref is trace.image_job
    assert pipe.jobs.get("unknown-job") is None


def test_dispatch_validates_inputs(tmp_path, registry, schema):
    pipe, _, _ = _make_pipeline(tmp_path, registry)
    job = pipe.dispatch(registry.models[0].model_id, "a prompt", schema.defaults())
    assert job.status == "done"
    with pytest.raises(Exception):
        pipe.dispatch("not-a-model", "p", schema.defaults())
    with pytest.raises(Exception):
        pipe.dispatch(registry.models[0].model_id, "p", {"steps": 9000})


# ---------------------------------------------------------------------------
# trace store


def test_trace_store_reloads_from_disk(tmp_path, registry):
    pipe, traces, _ = _make_pipeline(tmp_path, registry)
    t1 = pipe.run_evo(ChatInput.single("first"))
    t2 = pipe.run_evo(ChatInput.single("second"))
    assert len(traces) == 2

    reloaded = TraceStore(tmp_path / "traces.jsonl")
    assert len(reloaded) == 2
    assert {t1.trace_id, t2.trace_id} == {t.trace_id for t in reloaded.all()}
    got = reloaded.get(t1.trace_id)
    assert got.rewritten_prompt == t1.rewritten_prompt
    assert got.input.to_json() == t1.input.to_json()
