"""Abnormal-metric detection and BM25 ranking of knowledge chunks.

Chunks are matched on their ``metrics`` attribute only: the query is the set
of metric names flagged abnormal by a two-sample KS test, and each chunk's
metric list plays the role of the document.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .knowledge import KnowledgeChunk, normalize_metric

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_KS_THRESHOLD = 0.3


class EmptySample(ValueError):
    pass


class MissingCounterpartSeries(KeyError):
    pass


@dataclass
class MetricSeries:
    metric_name: str
    timestamps: list[float]
    values: list[float]

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise ValueError(f"{self.metric_name}: timestamps and values differ in length")
        if not self.values:
            raise ValueError(f"{self.metric_name}: empty series")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError(f"{self.metric_name}: timestamps must be strictly increasing")

    def between(self, start: float, end: float, include_end: bool = True) -> MetricSeries | None:
        """Points with ``start <= t <= end`` (or ``< end``); None if there are none."""
        keep = [
            (t, v)
            for t, v in zip(self.timestamps, self.values)
            if start <= t and (t <= end if include_end else t < end)
        ]
        if not keep:
            return None
        ts, vs = zip(*keep)
        return MetricSeries(self.metric_name, list(ts), list(vs))


def load_metric_series(path: str | Path) -> list[MetricSeries]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(MetricSeries(d["metric_name"], d["timestamps"], d["values"]))
    return out


@dataclass(frozen=True)
class AbnormalQuery:
    metrics: frozenset[str]
    window: tuple[float, float]

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError("query window needs start_time < end_time")
        object.__setattr__(self, "metrics", frozenset(normalize_metric(m) for m in self.metrics))


def ks_statistic(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|."""
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    # the sup is attained at one of the observed points (right-continuous CDFs)
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def split_reference(series: Iterable[MetricSeries], start: float, end: float):
    """Cut each series into (reference, anomaly) windows.

    The reference is the equal-length window immediately before the anomaly:
    ``[start - (end - start), start)``. Series lacking points in either
    window are dropped.
    """
    span = end - start
    reference, window = [], []
    for s in series:
        w = s.between(start, end)
        r = s.between(start - span, start, include_end=False)
        if w is not None and r is not None:
            reference.append(r)
            window.append(w)
    return reference, window


def detect_abnormal_metrics(
    reference: Sequence[MetricSeries],
    anomaly_window: Sequence[MetricSeries],
    threshold: float | dict[str, float] = DEFAULT_KS_THRESHOLD,
    window: tuple[float, float] | None = None,
) -> AbnormalQuery:
    """Flag metrics whose KS statistic against the reference exceeds ``threshold``.

    ``threshold`` may be a per-metric mapping; metrics absent from it use
    DEFAULT_KS_THRESHOLD.
    """
    ref_by_name = {normalize_metric(s.metric_name): s for s in reference}
    flagged = set()
    for s in anomaly_window:
        name = normalize_metric(s.metric_name)
        if name not in ref_by_name:
            raise MissingCounterpartSeries(s.metric_name)
        limit = threshold.get(name, DEFAULT_KS_THRESHOLD) if isinstance(threshold, dict) else threshold
        if ks_statistic(ref_by_name[name].values, s.values) > limit:
            flagged.add(name)
    if window is None:
        ts = [t for s in anomaly_window for t in s.timestamps]
        lo, hi = (min(ts), max(ts)) if ts else (0.0, 1.0)
        window = (lo, hi if hi > lo else lo + 1)
    return AbnormalQuery(frozenset(flagged), window)


@dataclass
class CorpusStats:
    N: int
    doc_freq: dict[str, int]
    avgDL: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("corpus must hold at least one chunk")
        if self.avgDL <= 0:
            raise ValueError("avgDL must be positive")
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ValueError("need k1 >= 0 and 0 <= b <= 1")
        if any(not 0 <= n <= self.N for n in self.doc_freq.values()):
            raise ValueError("document frequencies must lie in [0, N]")

    @classmethod
    def from_chunks(cls, chunks: Sequence[KnowledgeChunk], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> CorpusStats:
        df: Counter[str] = Counter()
        total = 0
        for c in chunks:
            terms = c.metric_terms
            total += len(terms)
            df.update(set(terms))
        return cls(N=len(chunks), doc_freq=dict(df), avgDL=total / max(len(chunks), 1), k1=k1, b=b)


def idf(metric: str, stats: CorpusStats) -> float:
    n = stats.doc_freq.get(normalize_metric(metric), 0)
    return math.log((stats.N - n + 0.5) / (n + 0.5) + 1.0)


def bm25_score(chunk: KnowledgeChunk, query: AbnormalQuery | Iterable[str], stats: CorpusStats) -> float:
    metrics = query.metrics if isinstance(query, AbnormalQuery) else {normalize_metric(q) for q in query}
    tf = Counter(chunk.metric_terms)
    length_norm = stats.k1 * (1 - stats.b + stats.b * len(chunk.metrics) / stats.avgDL)
    score = 0.0
    for q in sorted(metrics):
        f = tf.get(q, 0)
        if f:
            score += idf(q, stats) * f * (stats.k1 + 1) / (f + length_norm)
    return score


def rank_chunks(
    query: AbnormalQuery | Iterable[str],
    chunks: Sequence[KnowledgeChunk],
    stats: CorpusStats,
    top_n: int = 5,
) -> list[tuple[str, float]]:
    """Top ``top_n`` (name, score) pairs, best first; zero scores are dropped."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    scored = [(c.name, bm25_score(c, query, stats)) for c in chunks]
    scored = [s for s in scored if s[1] > 0]
    scored.sort(key=lambda s: (-s[1], s[0]))
    return scored[:top_n]
