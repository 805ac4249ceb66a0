import json
import random
import warnings

import numpy as np
import pytest

from dbot.fixtures import path
from dbot.gateway import Gateway
from dbot.matcher import (
    DegenerateDatasetWarning,
    LabeledPair,
    MatcherModel,
    design_matrix,
    filter_relevant,
    load_pairs,
    loss_and_grad,
    predict_relevance,
    sigmoid,
    train_matcher,
)
from dbot.toolkit import ToolMatcher, register_tools
from oracles import finite_difference

WORDS = "cpu memory disk index query insert lock commit vacuum scan rows table wal latency join fetch".split()


def separable_pairs(gw, registry, n=40, seed=0):
    """Labels drawn from a fixed weight vector, so the data is linearly separable."""
    rng = random.Random(seed)
    true_w = np.random.default_rng(seed).normal(size=2 * 64 + 1)
    apis = [s.api_name for s in registry.specs()]
    raw = []
    for _ in range(n):
        ctx = " ".join(rng.choices(WORDS, k=5))
        api = rng.choice(apis)
        x = np.concatenate([gw.embed(ctx), gw.embed(registry.get(api).description), [1.0]])
        raw.append((ctx, api, float(x @ true_w)))
    cut = float(np.median([s for _, _, s in raw]))
    return [LabeledPair(ctx, api, int(s > cut)) for ctx, api, s in raw]


@pytest.fixture
def setup():
    return Gateway.scripted(), register_tools(path("tools.json"))


def test_sigmoid_is_stable():
    z = np.array([-1000.0, 0.0, 1000.0])
    assert np.allclose(sigmoid(z), [0.0, 0.5, 1.0])


def test_loss_hand_value():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([1.0, 0.0])
    loss, grad = loss_and_grad(np.zeros(2), X, y)
    assert loss == pytest.approx(2 * np.log(2), abs=1e-12)
    assert np.allclose(grad, [-0.5, 0.5])


def test_gradient_matches_finite_differences(setup):
    gw, reg = setup
    X, y = design_matrix(separable_pairs(gw, reg, 15), reg, gw)
    rng = np.random.default_rng(9)
    for _ in range(5):
        w = rng.normal(size=X.shape[1])
        _, g = loss_and_grad(w, X, y)
        num = finite_difference(lambda v: loss_and_grad(v, X, y)[0], w)
        rel = np.max(np.abs(g - num) / np.maximum(1e-8, np.abs(g) + np.abs(num)))
        assert rel < 1e-4


def test_training_reduces_loss_and_fits_separable_data(setup):
    gw, reg = setup
    pairs = separable_pairs(gw, reg)
    model = train_matcher(pairs, reg, gw, epochs=300, learning_rate=0.01)
    assert all(b <= a + 1e-12 for a, b in zip(model.losses, model.losses[1:]))
    X, y = design_matrix(pairs, reg, gw)
    assert loss_and_grad(model.weights, X, y)[0] == pytest.approx(min(model.losses))
    acc = np.mean((sigmoid(X @ model.weights) >= 0.5) == y)
    assert acc >= 0.9


def test_best_iterate_never_worse_than_start(setup):
    gw, reg = setup
    pairs = separable_pairs(gw, reg, 20)
    model = train_matcher(pairs, reg, gw, epochs=20, learning_rate=50.0)  # deliberately unstable
    X, y = design_matrix(pairs, reg, gw)
    assert loss_and_grad(model.weights, X, y)[0] <= model.losses[0]


def test_single_class_warns(setup):
    gw, reg = setup
    with pytest.warns(DegenerateDatasetWarning):
        train_matcher([LabeledPair("cpu", "fetch_slow_queries", 1)], reg, gw, epochs=2)
    with pytest.raises(ValueError):
        train_matcher([], reg, gw)


def test_model_and_pair_validation():
    with pytest.raises(ValueError):
        LabeledPair("c", "a", 2)
    with pytest.raises(ValueError):
        MatcherModel(np.zeros(3), d=64)
    with pytest.raises(ValueError):
        MatcherModel(np.full(129, np.nan), d=64)


def test_filter_relevant_and_load_pairs(setup, tmp_path):
    gw, reg = setup
    pairs = separable_pairs(gw, reg)
    p = tmp_path / "pairs.jsonl"
    p.write_text("".join(json.dumps({"context": x.context, "tool_api": x.tool_api, "label": x.label}) + "\n" for x in pairs))
    assert load_pairs(p) == pairs
    model = train_matcher(pairs, reg, gw, epochs=200, learning_rate=0.05)
    matches = ToolMatcher(reg, gw).match_tools("cpu rows fetch", 5)
    kept = filter_relevant(model, "cpu rows fetch", matches, gw)
    assert kept == [m for m in matches if predict_relevance(model, "cpu rows fetch", m[0], gw) >= 0.5]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert 0.0 <= predict_relevance(model, "x", matches[0][0], gw) <= 1.0
