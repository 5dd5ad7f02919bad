"""Configuration loading and runtime assembly.

One TOML or JSON file configures paths, backends, the encoder, the
selector head and the pipeline mode. Validation reports every problem at
once instead of stopping at the first, and `--set section.key=value`
overrides are applied before validation so a config file is never
required for small runs.
"""

from __future__ import annotations

import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .argconf import DEFAULT_CONTEXT_BUDGET, DEFAULT_K, ArgConfigurator
from .argschema import default_schema
from .datastore import ModelRegistry, load_registry
from .encoders import HashingEncoder
from .errors import ConfigError
from .llm import (
    ArgsEchoMock,
    ChatBackend,
    ConstantBackend,
    DirectTripleMock,
    RemoteChatBackend,
    RewriteEchoMock,
    RolePlayMock,
)
from .pipeline import JobStore, Pipeline, TraceStore
from .render import ImageStore, MockRenderer, RemoteRenderer
from .rewriter import DEFAULT_INSTRUCTION, DEFAULT_TOKEN_CAP, Rewriter
from .selector import TokenHead, init_head, load_head, synth_word_rows

DEFAULTS: dict[str, dict[str, Any]] = {
    "paths": {
        "workdir": "work",
        "registry": "",      # default: <workdir>/registry.jsonl
        "demos": "",         # default: <workdir>/demos.jsonl
        "benchmark": "",     # default: <workdir>/benchmark.jsonl
        "traces": "",        # default: <workdir>/traces.jsonl
        "images": "",        # default: <workdir>/images
        "checkpoint": "",    # default: <workdir>/head.ckpt
        "roles": "",         # empty: use the packaged role deck
    },
    "encoder": {
        "dim": 64,
        "seed": 1234,
        "buckets": 4096,
    },
    "selector": {
        "preset": "toy",
        "seed": 0,
        "mode": "constrained",
        "include_word_rows": True,
        "num_words": 32,
        "word_seed": 123,
    },
    "rewriter": {
        "instruction": DEFAULT_INSTRUCTION,
        "token_cap": DEFAULT_TOKEN_CAP,
        "temperature": 0.2,
    },
    "argconf": {
        "k_demos": DEFAULT_K,
        "context_budget": DEFAULT_CONTEXT_BUDGET,
        "retries": 2,
    },
    "backends": {
        "rewrite": "mock",
        "args": "mock",
        "direct": "mock",
        "roleplay": "mock",
        "judge": "",
        "renderer": "mock",
        "chat_url": "",
        "chat_model": "",
        "render_url": "",
    },
    "pipeline": {
        "mode": "evo",
        "baseline_model": "",
        "direct_model": "",
        "workers": 0,
    },
    "bench": {
        "fewshot_k": 5,
        "dedup_threshold": 0.8,
        "test_fraction": 0.2,
        "seed": 0,
    },
    "server": {
        "host": "127.0.0.1",
        "port": 8080,
    },
}

_ENUMS: dict[tuple[str, str], tuple[str, ...]] = {
    ("selector", "preset"): ("toy", "paper"),
    ("selector", "mode"): ("constrained", "unconstrained"),
    ("backends", "rewrite"): ("mock", "remote"),
    ("backends", "args"): ("mock", "remote"),
    ("backends", "direct"): ("mock", "remote"),
    ("backends", "roleplay"): ("mock", "remote"),
    ("backends", "judge"): ("", "mock", "remote"),
    ("backends", "renderer"): ("mock", "remote"),
    ("pipeline", "mode"): ("evo", "direct", "fixed_baseline"),
}


def _deep_copy(obj: dict[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
    return {sec: dict(vals) for sec, vals in obj.items()}


def read_config_file(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise ConfigError([f"config file not found: {p}"])
    if p.suffix == ".toml":
        with p.open("rb") as fh:
            return tomllib.load(fh)
    if p.suffix == ".json":
        return json.loads(p.read_text())
    raise ConfigError([f"unsupported config format {p.suffix!r} (use .toml or .json)"])


def parse_override(item: str) -> tuple[str, str, str]:
    """Split one --set item of the form section.key=value."""
    key, sep, value = item.partition("=")
    if not sep:
        raise ConfigError([f"override {item!r} is not of the form section.key=value"])
    section, dot, name = key.strip().partition(".")
    if not dot or not section or not name:
        raise ConfigError([f"override key {key.strip()!r} is not of the form section.key"])
    return section, name, value.strip()


def _coerce_like(default: Any, raw: str, where: str, errors: list[str]) -> Any:
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        errors.append(f"{where}: expected a boolean, got {raw!r}")
        return default
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            errors.append(f"{where}: expected an integer, got {raw!r}")
            return default
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            errors.append(f"{where}: expected a number, got {raw!r}")
            return default
    return raw


def load_config(
    path: str | Path | None = None,
    overrides: Iterable[str] = (),
) -> dict[str, dict[str, Any]]:
    """Merge file + overrides over defaults and validate everything at once."""
    config = _deep_copy(DEFAULTS)
    errors: list[str] = []

    if path is not None:
        loaded = read_config_file(path)
        for section, values in loaded.items():
            if section not in config:
                errors.append(f"unknown config section [{section}]")
                continue
            if not isinstance(values, dict):
                errors.append(f"[{section}] must be a table of keys")
                continue
            for name, value in values.items():
                if name not in config[section]:
                    errors.append(f"unknown config key {section}.{name}")
                    continue
                default = DEFAULTS[section][name]
                if isinstance(default, bool) != isinstance(value, bool) or (
                    not isinstance(default, bool)
                    and not isinstance(value, type(default))
                    and not (isinstance(default, float) and isinstance(value, int))
                ):
                    errors.append(
                        f"{section}.{name}: expected {type(default).__name__}, "
                        f"got {type(value).__name__}"
                    )
                    continue
                config[section][name] = float(value) if isinstance(default, float) else value

    for item in overrides:
        section, name, raw = parse_override(item)
        if section not in config or name not in config[section]:
            errors.append(f"unknown config key {section}.{name}")
            continue
        config[section][name] = _coerce_like(
            DEFAULTS[section][name], raw, f"{section}.{name}", errors
        )

    _validate(config, errors)
    if errors:
        raise ConfigError(errors)
    return config


def _validate(config: dict[str, dict[str, Any]], errors: list[str]) -> None:
    for (section, name), allowed in _ENUMS.items():
        value = config[section][name]
        if value not in allowed:
            errors.append(f"{section}.{name}: {value!r} not one of {list(allowed)}")
    enc = config["encoder"]
    if enc["dim"] <= 0:
        errors.append("encoder.dim must be > 0")
    if enc["buckets"] <= 0:
        errors.append("encoder.buckets must be > 0")
    sel = config["selector"]
    if sel["num_words"] <= 0:
        errors.append("selector.num_words must be > 0")
    pipe = config["pipeline"]
    if pipe["mode"] == "fixed_baseline" and not pipe["baseline_model"]:
        errors.append("pipeline.baseline_model is required when pipeline.mode = fixed_baseline")
    if pipe["workers"] < 0:
        errors.append("pipeline.workers must be >= 0")
    bench = config["bench"]
    if not 0.0 < bench["test_fraction"] < 1.0:
        errors.append("bench.test_fraction must be in (0, 1)")
    if not 0.0 <= bench["dedup_threshold"] <= 1.0:
        errors.append("bench.dedup_threshold must be in [0, 1]")
    if bench["fewshot_k"] < 0:
        errors.append("bench.fewshot_k must be >= 0")
    if not 0 < config["server"]["port"] < 65536:
        errors.append("server.port must be a valid TCP port")
    for name in ("rewrite", "args", "direct", "roleplay", "judge"):
        if config["backends"][name] == "remote" and not config["backends"]["chat_url"]:
            errors.append(f"backends.chat_url is required when backends.{name} = remote")
            break
    if config["backends"]["renderer"] == "remote" and not config["backends"]["render_url"]:
        errors.append("backends.render_url is required when backends.renderer = remote")


def resolve_path(config: dict[str, dict[str, Any]], key: str) -> Path:
    """Path from [paths], defaulting into the workdir."""
    paths = config["paths"]
    if paths.get(key):
        return Path(paths[key])
    defaults = {
        "registry": "registry.jsonl",
        "demos": "demos.jsonl",
        "benchmark": "benchmark.jsonl",
        "traces": "traces.jsonl",
        "images": "images",
        "checkpoint": "head.ckpt",
    }
    return Path(paths["workdir"]) / defaults[key]


def resolved_json(config: dict[str, dict[str, Any]]) -> str:
    return json.dumps(config, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# runtime assembly


@dataclass
class AppContext:
    config: dict[str, dict[str, Any]]
    registry: ModelRegistry
    encoder: HashingEncoder
    head: TokenHead
    pipeline: Pipeline
    jobs: JobStore
    traces: TraceStore
    images: ImageStore
    backends: dict[str, ChatBackend] = field(default_factory=dict)


def make_chat_backend(config: dict[str, dict[str, Any]], role: str,
                      registry: ModelRegistry | None = None) -> ChatBackend | None:
    kind = config["backends"][role]
    if not kind:
        return None
    if kind == "remote":
        return RemoteChatBackend(
            config["backends"]["chat_url"], config["backends"]["chat_model"]
        )
    if role == "rewrite":
        return RewriteEchoMock()
    if role == "args":
        return ArgsEchoMock()
    if role == "direct":
        name = config["pipeline"]["direct_model"]
        if not name and registry is not None and registry.models:
            name = registry.models[0].display_name
        return DirectTripleMock(name or "unknown")
    if role == "roleplay":
        return RolePlayMock()
    return ConstantBackend("keep", id="mock-judge")


def word_rows_from_config(config: dict[str, dict[str, Any]]):
    sel = config["selector"]
    return synth_word_rows(sel["num_words"], config["encoder"]["dim"], sel["word_seed"])


def load_or_init_head(config: dict[str, dict[str, Any]],
                      registry: ModelRegistry) -> TokenHead:
    word_rows = word_rows_from_config(config)
    model_ids = registry.model_ids_by_token_index()
    ckpt = resolve_path(config, "checkpoint")
    if ckpt.exists():
        return load_head(ckpt, word_rows, model_ids=model_ids)
    return init_head(
        len(model_ids), config["encoder"]["dim"], config["selector"]["seed"],
        word_rows=word_rows, model_ids=model_ids,
    )


def build_context(config: dict[str, dict[str, Any]]) -> AppContext:
    """Wire the full runtime from a validated config."""
    registry = load_registry(resolve_path(config, "registry"),
                             resolve_path(config, "demos"))
    enc = config["encoder"]
    encoder = HashingEncoder(dim=enc["dim"], seed=enc["seed"], buckets=enc["buckets"])
    head = load_or_init_head(config, registry)

    rewrite_backend = make_chat_backend(config, "rewrite")
    args_backend = make_chat_backend(config, "args")
    direct_backend = make_chat_backend(config, "direct", registry)
    assert rewrite_backend is not None and args_backend is not None

    rw = config["rewriter"]
    rewriter = Rewriter(rewrite_backend, instruction=rw["instruction"],
                        token_cap=rw["token_cap"], temperature=rw["temperature"])
    ac = config["argconf"]
    configurator = ArgConfigurator(
        args_backend, registry, encoder,
        k=ac["k_demos"], context_budget=ac["context_budget"], max_retries=ac["retries"],
    )
    images = ImageStore(resolve_path(config, "images"))
    renderer = (
        MockRenderer()
        if config["backends"]["renderer"] == "mock"
        else RemoteRenderer(config["backends"]["render_url"])
    )
    jobs = JobStore(renderer, images, workers=config["pipeline"]["workers"])
    traces = TraceStore(resolve_path(config, "traces"))

    pipe = config["pipeline"]
    pipeline = Pipeline(
        registry, encoder, head, rewriter, configurator, jobs, traces,
        direct_backend=direct_backend,
        baseline_model_id=pipe["baseline_model"] or None,
        selection_mode=config["selector"]["mode"],
        include_word_rows=config["selector"]["include_word_rows"],
    )
    return AppContext(
        config=config, registry=registry, encoder=encoder, head=head,
        pipeline=pipeline, jobs=jobs, traces=traces, images=images,
        backends={
            "rewrite": rewrite_backend, "args": args_backend,
            **({"direct": direct_backend} if direct_backend else {}),
        },
    )
