from __future__ import annotations

from collections import deque

import numpy as np

NOISE = -1


class DimensionMismatch(ValueError):
    pass


class InsufficientData(ValueError):
    pass


def _as_matrix(points) -> np.ndarray:
    rows = [np.asarray(p, dtype=float).ravel() for p in points]
    if rows and len({r.size for r in rows}) > 1:
        raise DimensionMismatch("all points must have the same dimension")
    return np.vstack(rows) if rows else np.zeros((0, 0))


def pairwise_distances(X: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    if metric == "euclidean":
        sq = np.sum(X * X, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
        return np.sqrt(np.maximum(d2, 0.0))
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        norms[norms == 0] = 1.0
        U = X / norms[:, None]
        return np.clip(1.0 - U @ U.T, 0.0, 2.0)
    raise ValueError(f"unknown metric {metric!r}")


def dbscan(points, eps: float, min_pts: int, metric: str = "euclidean") -> list[int]:
    """Density-based clustering; returns one label per point, -1 for noise.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are numbered 0, 1, ... in order of their
    lowest-index core point; a border point joins the first cluster that
    reaches it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    X = _as_matrix(points)
    n = X.shape[0]
    if n == 0:
        return []
    within = pairwise_distances(X, metric) <= eps
    neighbors = [np.flatnonzero(row) for row in within]
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    labels = [NOISE] * n
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


def pca_project(vectors, k: int = 3) -> tuple[np.ndarray, float]:
    """Project mean-centred data onto its top-``k`` principal components.

    Returns ``(coords, retained)`` where ``retained`` is the fraction of total
    variance captured by the k components (0 for data with no spread).
    Component signs are fixed so each axis' largest-magnitude loading is
    positive, which keeps the output deterministic.
    """
    X = _as_matrix(vectors)
    if X.shape[0] < k:
        raise InsufficientData(f"need at least {k} vectors, got {X.shape[0]}")
    centered = X - X.mean(axis=0)
    total = float(np.sum(centered**2))
    if total <= 1e-24:
        return np.zeros((X.shape[0], k)), 0.0
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k]
    flip = np.sign(comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    coords = centered @ comps.T
    if coords.shape[1] < k:
        coords = np.hstack([coords, np.zeros((coords.shape[0], k - coords.shape[1]))])
    retained = float(np.sum(s[:k] ** 2) / total)
    return coords, min(retained, 1.0)
