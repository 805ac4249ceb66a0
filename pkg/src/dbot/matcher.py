"""Relevance scorer for (context, tool) pairs trained with binary cross-entropy.

Features are the concatenated, frozen embeddings of the context and of the
tool's utilization specification; a logistic head with a trailing bias weight
is fit by full-batch gradient descent on the summed loss.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gateway import Gateway
from .toolkit import ToolRegistry, ToolSpec

log = logging.getLogger(__name__)


class DegenerateDatasetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LabeledPair:
    context: str
    tool_api: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


def load_pairs(path: str | Path) -> list[LabeledPair]:
    with open(path, encoding="utf-8") as fh:
        return [LabeledPair(d["context"], d["tool_api"], int(d["label"])) for d in map(json.loads, fh) if d]


@dataclass
class MatcherModel:
    weights: np.ndarray
    d: int
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (2 * self.d + 1,):
            raise ValueError(f"expected {2 * self.d + 1} weights, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def design_matrix(pairs: Sequence[LabeledPair], registry: ToolRegistry, gateway: Gateway) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    for p in pairs:
        tool = registry.get(p.tool_api)
        rows.append(np.concatenate([gateway.embed(p.context), gateway.embed(tool.description), [1.0]]))
    return np.vstack(rows), np.array([p.label for p in pairs], dtype=float)


def loss_and_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy and its gradient with respect to the weights."""
    z = X @ w
    # -[y log s(z) + (1-y) log(1-s(z))] = log(1+e^z) - y z
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    grad = X.T @ (sigmoid(z) - y)
    return loss, grad


def train_matcher(
    dataset: Sequence[LabeledPair],
    registry: ToolRegistry,
    gateway: Gateway,
    epochs: int = 500,
    learning_rate: float = 0.1,
    init: np.ndarray | None = None,
) -> MatcherModel:
    """Fit the logistic head by gradient descent.

    The returned weights are the lowest-loss iterate seen, so the final loss
    never exceeds the initial one. ``model.losses`` holds the loss per epoch.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if len({p.label for p in dataset}) < 2:
        warnings.warn("dataset holds a single label class", DegenerateDatasetWarning, stacklevel=2)
    X, y = design_matrix(dataset, registry, gateway)
    d = (X.shape[1] - 1) // 2
    w = np.zeros(X.shape[1]) if init is None else np.array(init, dtype=float)
    best_w, best_loss = w.copy(), np.inf
    losses = []
    for _ in range(epochs + 1):
        loss, grad = loss_and_grad(w, X, y)
        losses.append(loss)
        if loss < best_loss:
            best_w, best_loss = w.copy(), loss
        w = w - learning_rate * grad
    log.debug("matcher trained: loss %.4f -> %.4f", losses[0], best_loss)
    return MatcherModel(best_w, d, losses)


def predict_relevance(model: MatcherModel, context: str, tool: ToolSpec, gateway: Gateway) -> float:
    x = np.concatenate([gateway.embed(context), gateway.embed(tool.description), [1.0]])
    return float(sigmoid(x @ model.weights))


def filter_relevant(
    model: MatcherModel,
    context: str,
    matches: Sequence[tuple[ToolSpec, float]],
    gateway: Gateway,
    p_min: float = 0.5,
) -> list[tuple[ToolSpec, float]]:
    """Drop cosine-matched tools whose predicted relevance is below ``p_min``."""
    return [m for m in matches if predict_relevance(model, context, m[0], gateway) >= p_min]
