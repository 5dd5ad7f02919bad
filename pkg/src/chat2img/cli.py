"""Command-line entry point.

Subcommands: init-demo, build-bench, train-selector, run-pipeline,
evaluate, serve. Every command echoes the resolved config to stderr for
reproducibility and exits nonzero with a machine-readable JSON error
summary on failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import benchbuild, sampledata
from .config import (
    build_context,
    load_config,
    make_chat_backend,
    resolve_path,
    resolved_json,
    word_rows_from_config,
)
from .datastore import build_registry, load_benchmark, load_registry, save_registry
from .encoders import HashingEncoder
from .errors import Chat2ImgError, ConfigError
from .metrics import build_report, evaluate_run
from .pipeline import save_traces, load_traces
from .selector import TrainConfig, init_head, save_head, train

log = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="SECTION.KEY=VALUE", help="override one config value (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chat2img")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-demo", help="write a synthetic demo corpus and registry")
    _add_common(p)
    p.add_argument("--models", type=int, default=5)
    p.add_argument("--per-model", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("build-bench", help="generate a benchmark from the demo corpus")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=200, help="generation job count")
    p.add_argument("--seed", type=int, default=None, help="defaults to bench.seed")

    p = sub.add_parser("train-selector", help="train the model-token head")
    _add_common(p)
    p.add_argument("--preset", choices=("toy", "paper"), default=None)
    p.add_argument("--seed", type=int, default=None, help="defaults to selector.seed")
    p.add_argument("--epochs", type=int, default=None, help="override the preset epoch count")

    p = sub.add_parser("run-pipeline", help="run benchmark samples through the pipeline")
    _add_common(p)
    p.add_argument("--mode", choices=("evo", "direct", "fixed_baseline"), default=None)
    p.add_argument("--limit", type=int, default=0, help="0 = all test samples")
    p.add_argument("--out", help="trace output path (defaults to paths.traces)")

    p = sub.add_parser("evaluate", help="score traces against the benchmark")
    _add_common(p)
    p.add_argument("--traces", help="trace file (defaults to paths.traces)")
    p.add_argument("--bench", help="benchmark file (defaults to paths.benchmark)")
    p.add_argument("--out", default="report.json")

    p = sub.add_parser("serve", help="start the HTTP gateway")
    _add_common(p)

    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_init_demo(args: argparse.Namespace, config: dict) -> int:
    demos, display = sampledata.make_demos(args.models, args.per_model, args.seed)
    registry = build_registry(demos, display_names=display)
    registry_path = resolve_path(config, "registry")
    demos_path = resolve_path(config, "demos")
    registry_path.parent.mkdir(parents=True, exist_ok=True)
    save_registry(registry, registry_path, demos_path)
    print(json.dumps({
        "registry": str(registry_path),
        "demos": str(demos_path),
        "models": len(registry.models),
        "demonstrations": len(registry.demos),
    }))
    return 0


def cmd_build_bench(args: argparse.Namespace, config: dict) -> int:
    registry = load_registry(resolve_path(config, "registry"), resolve_path(config, "demos"))
    roles_path = config["paths"]["roles"]
    roles = benchbuild.load_roles(roles_path) if roles_path else benchbuild.default_roles()
    enc = config["encoder"]
    embedder = HashingEncoder(dim=enc["dim"], seed=enc["seed"], buckets=enc["buckets"])
    seed = args.seed if args.seed is not None else config["bench"]["seed"]
    demos = {d.demo_id: d for d in registry.demos}
    jobs = sampledata.make_jobs(registry.demos, roles, args.jobs, seed=seed)
    backend = make_chat_backend(config, "roleplay")
    judge = make_chat_backend(config, "judge")
    assert backend is not None
    bench_path = resolve_path(config, "benchmark")
    samples, manifest = benchbuild.build_benchmark(
        jobs, {job.backend_id: backend for job in jobs},
        demos, {r.role_id: r for r in roles},
        {m.model_id: m.display_name for m in registry.models},
        embedder,
        judge=judge,
        k=config["bench"]["fewshot_k"],
        dedup_threshold=config["bench"]["dedup_threshold"],
        test_fraction=config["bench"]["test_fraction"],
        archive_path=bench_path.with_suffix(".raw.jsonl"),
    )
    bench_path.parent.mkdir(parents=True, exist_ok=True)
    from .datastore import write_records

    write_records(bench_path, "bench", (s.to_json() for s in samples))
    manifest_path = bench_path.with_suffix(".manifest.json")
    benchbuild.write_manifest(manifest_path, manifest)
    print(json.dumps({"benchmark": str(bench_path), "manifest": str(manifest_path),
                      **{k: manifest[k] for k in ("total", "generated")}}))
    return 0


def cmd_train_selector(args: argparse.Namespace, config: dict) -> int:
    if args.preset:
        config["selector"]["preset"] = args.preset
    if args.seed is not None:
        config["selector"]["seed"] = args.seed
    registry = load_registry(resolve_path(config, "registry"), resolve_path(config, "demos"))
    bench = load_benchmark(resolve_path(config, "benchmark"), registry)
    enc = config["encoder"]
    encoder = HashingEncoder(dim=enc["dim"], seed=enc["seed"], buckets=enc["buckets"])

    token_of = {m: i for i, m in enumerate(registry.model_ids_by_token_index())}
    train_rows = [s for s in bench if s.split == "train"]
    test_rows = [s for s in bench if s.split == "test"]
    if not train_rows:
        raise Chat2ImgError("benchmark has no train split to learn from")
    dataset = [
        (encoder.encode(s.input, s.gt_prompt), token_of[s.gt_model_id]) for s in train_rows
    ]
    holdout = [
        (encoder.encode(s.input, s.gt_prompt), token_of[s.gt_model_id]) for s in test_rows
    ]

    seed = config["selector"]["seed"]
    preset = config["selector"]["preset"]
    cfg = TrainConfig.paper_preset(seed) if preset == "paper" else TrainConfig.toy_preset(seed)
    if args.epochs is not None:
        cfg = TrainConfig(
            learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay,
            epochs=args.epochs, batch_size=cfg.batch_size, seed=seed,
            optimizer=cfg.optimizer,
        )
    head = init_head(
        len(token_of), enc["dim"], seed,
        word_rows=word_rows_from_config(config),
        model_ids=registry.model_ids_by_token_index(),
    )
    report = train(head, dataset, cfg, holdout=holdout or None)
    ckpt = resolve_path(config, "checkpoint")
    digest = save_head(head, ckpt)
    print(json.dumps({
        "checkpoint": str(ckpt),
        "digest": digest,
        "epochs": cfg.epochs,
        "final_epoch_loss": report.epoch_losses[-1] if report.epoch_losses else None,
        "holdout_accuracy": report.holdout_accuracy,
    }))
    return 0


def cmd_run_pipeline(args: argparse.Namespace, config: dict) -> int:
    if args.mode:
        config["pipeline"]["mode"] = args.mode
        if args.mode == "fixed_baseline" and not config["pipeline"]["baseline_model"]:
            raise ConfigError(["pipeline.baseline_model is required for fixed_baseline mode"])
    ctx = build_context(config)
    bench = load_benchmark(resolve_path(config, "benchmark"), ctx.registry)
    rows = [s for s in bench if s.split == "test"]
    if args.limit:
        rows = rows[: args.limit]
    mode = config["pipeline"]["mode"]
    failed = 0
    for sample in rows:
        trace = ctx.pipeline.run(sample.input, mode, sample_id=sample.sample_id)
        failed += int(trace.failed)
    out = Path(args.out) if args.out else resolve_path(config, "traces")
    if args.out:
        save_traces(out, ctx.traces.all())
    print(json.dumps({"traces": str(out), "mode": mode,
                      "count": len(rows), "failed": failed}))
    return 0


def cmd_evaluate(args: argparse.Namespace, config: dict) -> int:
    registry = load_registry(resolve_path(config, "registry"), resolve_path(config, "demos"))
    bench_path = Path(args.bench) if args.bench else resolve_path(config, "benchmark")
    traces_path = Path(args.traces) if args.traces else resolve_path(config, "traces")
    bench = load_benchmark(bench_path, registry)
    traces = [t for t in load_traces(traces_path) if t.sample_id is not None]
    if not traces:
        raise Chat2ImgError(f"no evaluable traces in {traces_path}")
    enc = config["encoder"]
    embedder = HashingEncoder(dim=enc["dim"], seed=enc["seed"], buckets=enc["buckets"])
    row = evaluate_run(traces, bench, embedder, schema=registry.schema)
    report = build_report([row], embedder.id, config={"bench": str(bench_path),
                                                     "traces": str(traces_path)})
    report.write(args.out)
    print(json.dumps({"report": args.out, **row.to_json()}))
    return 0


def cmd_serve(args: argparse.Namespace, config: dict) -> int:
    import uvicorn

    from .server import create_app

    ctx = build_context(config)
    app = create_app(ctx)
    uvicorn.run(app, host=config["server"]["host"], port=config["server"]["port"])
    return 0


_COMMANDS = {
    "init-demo": cmd_init_demo,
    "build-bench": cmd_build_bench,
    "train-selector": cmd_train_selector,
    "run-pipeline": cmd_run_pipeline,
    "evaluate": cmd_evaluate,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        config = load_config(args.config, args.overrides)
        print(f"resolved config:\n{resolved_json(config)}", file=sys.stderr)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "details": exc.errors}), file=sys.stderr)
        return 2
    except Chat2ImgError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
