import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from dbot.fixtures import path
from oracles import brute_ks, reference_bm25
from dbot.knowledge import KnowledgeChunk, load_knowledge
from dbot.retrieval import (
    AbnormalQuery,
    CorpusStats,
    EmptySample,
    MetricSeries,
    MissingCounterpartSeries,
    bm25_score,
    detect_abnormal_metrics,
    idf,
    ks_statistic,
    load_metric_series,
    rank_chunks,
    split_reference,
)


@pytest.mark.parametrize(
    "a,b,d",
    [([1, 2, 3], [1, 2, 3], 0.0), ([1, 2], [5, 6, 7], 1.0), ([1, 2], [1, 3], 0.5), ([0.0], [0.0, 1.0], 0.5)],
)
def test_ks_known_values(a, b, d):
    assert ks_statistic(a, b) == pytest.approx(d, abs=1e-12)


def test_ks_matches_brute_force_and_scipy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = rng.integers(0, 10, rng.integers(1, 20)).astype(float)
        b = rng.integers(0, 10, rng.integers(1, 20)).astype(float)
        d = ks_statistic(a, b)
        assert d == pytest.approx(brute_ks(a, b), abs=1e-12)
        assert d == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_ks_symmetric_and_bounded(a, b):
    d = ks_statistic(a, b)
    assert 0.0 <= d <= 1.0
    assert d == ks_statistic(b, a)


def test_ks_empty_sample():
    with pytest.raises(EmptySample):
        ks_statistic([], [1.0])


def test_series_validation():
    with pytest.raises(ValueError):
        MetricSeries("m", [1, 2], [1.0])
    with pytest.raises(ValueError):
        MetricSeries("m", [2, 1], [1.0, 1.0])


def test_split_reference_uses_preceding_equal_window():
    s = MetricSeries("cpu", list(range(0, 21)), [float(i) for i in range(21)])
    (ref,), (win,) = split_reference([s], 10, 20)
    assert ref.timestamps == list(range(0, 10))
    assert win.timestamps == list(range(10, 21))


def test_detect_flags_shifted_metric_only():
    ref = [MetricSeries("CPU_usage", [0, 1, 2, 3], [1, 2, 3, 4]), MetricSeries("mem", [0, 1, 2, 3], [5, 5, 5, 5])]
    win = [MetricSeries("cpu_usage", [4, 5, 6, 7], [50, 60, 70, 80]), MetricSeries("mem", [4, 5, 6, 7], [5, 5, 5, 5])]
    q = detect_abnormal_metrics(ref, win, 0.3, window=(4, 7))
    assert q.metrics == frozenset({"cpu_usage"})
    assert detect_abnormal_metrics(ref, win, {"cpu_usage": 1.0}, window=(4, 7)).metrics == frozenset()


def test_detect_requires_counterpart():
    with pytest.raises(MissingCounterpartSeries):
        detect_abnormal_metrics([], [MetricSeries("cpu", [0], [1.0])])


def test_fixture_metrics_flag_planted_anomaly():
    ref, win = split_reference(load_metric_series(path("metrics.jsonl")), 1684600070, 1684600130)
    q = detect_abnormal_metrics(ref, win, window=(1684600070, 1684600130))
    assert q.metrics == frozenset({"cpu_usage", "rows_fetched", "tuples_inserted"})


def test_query_window_must_be_ordered():
    with pytest.raises(ValueError):
        AbnormalQuery(frozenset({"cpu"}), (5, 5))


@pytest.mark.parametrize("N,n,expected", [(10, 3, 1.1451), (1, 1, 0.2877), (10, 0, math.log(22))])
def test_idf_hand_values(N, n, expected):
    stats = CorpusStats(N=N, doc_freq={"m": n}, avgDL=1.0)
    assert idf("m", stats) == pytest.approx(expected, abs=1e-4)


def random_corpus(rng, n_chunks):
    pool = [f"m{i}" for i in range(12)]
    return [KnowledgeChunk(f"c{i}", "x", rng.choices(pool, k=rng.randint(1, 5)), "s") for i in range(n_chunks)]


def test_bm25_matches_reference_formula():
    rng = random.Random(5)
    for _ in range(30):
        chunks = random_corpus(rng, rng.randint(1, 40))
        stats = CorpusStats.from_chunks(chunks)
        query = rng.sample([f"m{i}" for i in range(12)], rng.randint(1, 5))
        for c in chunks:
            assert bm25_score(c, query, stats) == pytest.approx(reference_bm25(c, query, chunks), abs=1e-9)


def test_bm25_single_hit_at_average_length_equals_idf():
    stats = CorpusStats(N=7, doc_freq={"a": 2}, avgDL=3.0)
    c = KnowledgeChunk("c", "x", ["a", "b", "d"], "s")
    assert bm25_score(c, ["a"], stats) == pytest.approx(idf("a", stats), abs=1e-12)


def test_bm25_is_case_insensitive_and_ignores_misses():
    chunks = load_knowledge(path("knowledge.json")).chunks
    stats = CorpusStats.from_chunks(chunks)
    c = chunks[0]
    assert bm25_score(c, ["CPU_Usage"], stats) == bm25_score(c, ["cpu_usage"], stats)
    assert bm25_score(c, ["nothing"], stats) == 0.0


def test_rank_chunks_on_fixture_knowledge():
    chunks = load_knowledge(path("knowledge.json")).chunks
    stats = CorpusStats.from_chunks(chunks)
    ranked = rank_chunks(["cpu_usage", "rows_fetched"], chunks, stats, top_n=3)
    assert ranked[0][0] == "large_data_fetch"
    assert [s for _, s in ranked] == sorted((s for _, s in ranked), reverse=True)
    assert all(s > 0 for _, s in ranked)
    assert rank_chunks(["unknown"], chunks, stats) == []
    with pytest.raises(ValueError):
        rank_chunks(["cpu_usage"], chunks, stats, top_n=0)


def test_corpus_stats_validation():
    with pytest.raises(ValueError):
        CorpusStats(N=0, doc_freq={}, avgDL=1.0)
    with pytest.raises(ValueError):
        CorpusStats(N=2, doc_freq={"a": 3}, avgDL=1.0)
    with pytest.raises(ValueError):
        CorpusStats(N=2, doc_freq={}, avgDL=1.0, b=1.5)
