"""Shared fixtures: synthetic corpora, registries, and a mock-backed runtime."""

from __future__ import annotations

import numpy as np
import pytest

from chat2img.argschema import default_schema
from chat2img.config import DEFAULTS, load_config, build_context
from chat2img.datastore import build_registry, save_registry
from chat2img.encoders import HashingEncoder
from chat2img.sampledata import make_demos


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def encoder():
    return HashingEncoder(dim=64, seed=1234)


@pytest.fixture(scope="session")
def demo_corpus():
    """(demos, display_names) for 5 themed models x 20 demos."""
    return make_demos(num_models=5, per_model=20, seed=11)


@pytest.fixture(scope="session")
def registry(demo_corpus):
    demos, display = demo_corpus
    return build_registry(demos, display_names=display)


def write_workspace(tmp_path, num_models=5, per_model=20, seed=11):
    """Materialize a registry + demo corpus under tmp_path and return a
    validated config pointing at it."""
    demos, display = make_demos(num_models=num_models, per_model=per_model, seed=seed)
    reg = build_registry(demos, display_names=display)
    work = tmp_path / "work"
    work.mkdir(exist_ok=True)
    save_registry(reg, work / "registry.jsonl", work / "demos.jsonl")
    config = load_config(None, [f"paths.workdir={work}"])
    return config, reg


@pytest.fixture()
def workspace(tmp_path):
    return write_workspace(tmp_path)


@pytest.fixture()
def mock_context(workspace):
    config, _ = workspace
    return build_context(config)


def make_routing_set(num_models=10, dim=64, n_train=50, n_held=20, sigma=0.1, seed=7):
    """Separated Gaussian clusters at unit-spaced means, L2-normalized."""
    rng = np.random.default_rng(seed)
    means = np.zeros((num_models, dim))
    for i in range(num_models):
        means[i, i] = 1.0

    def draw(n):
        feats, targets = [], []
        for m in range(num_models):
            X = means[m] + sigma * rng.standard_normal((n, dim))
            X /= np.linalg.norm(X, axis=1, keepdims=True)
            feats.append(X)
            targets.extend([m] * n)
        return np.vstack(feats), np.array(targets)

    X_train, y_train = draw(n_train)
    X_held, y_held = draw(n_held)
    return X_train, y_train, X_held, y_held


@pytest.fixture(scope="session")
def routing_set():
    return make_routing_set()
