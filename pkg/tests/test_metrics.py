import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timessd.errors import DataError
from timessd.metrics import RankingReport, metrics, rank_of_target


def brute_rank(scores, target):
    """Sort the catalog (pad excluded) with the target placed after its ties, then scan."""
    items = sorted(range(1, len(scores)), key=lambda i: (-scores[i], i == target))
    return items.index(target) + 1


def brute_metrics(ranks, k):
    hr = sum(r <= k for r in ranks) / len(ranks)
    ndcg = sum(1 / math.log2(r + 1) for r in ranks if r <= k) / len(ranks)
    mrr = sum(1 / r for r in ranks if r <= k) / len(ranks)
    return hr, ndcg, mrr


def test_top_score_rank_one():
    assert rank_of_target([-np.inf, 0.1, 0.9, 0.3], 2) == 1


def test_single_tie_ranks_second():
    assert rank_of_target([-np.inf, 0.5, 0.5, 0.1], 1) == 2
    assert rank_of_target([-np.inf, 0.5, 0.5, 0.1], 2) == 2


def test_pad_column_ignored():
    # even a huge pad score never counts
    assert rank_of_target([99.0, 0.2, 0.1], 1) == 1


def test_random_ten_items_match_sort():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = np.r_[-np.inf, rng.normal(size=10)]
        t = int(rng.integers(1, 11))
        assert rank_of_target(s, t) == brute_rank(s, t)


def test_batched_ranks():
    s = np.array([[-np.inf, 1, 2, 3], [-np.inf, 3, 2, 1]], dtype=float)
    assert rank_of_target(s, np.array([1, 1])).tolist() == [3, 1]


def test_bad_target():
    with pytest.raises(DataError):
        rank_of_target([0.0, 1.0], 0)
    with pytest.raises(DataError):
        rank_of_target([0.0, 1.0], 2)


def test_closed_forms():
    assert metrics([1], 1) == (1.0, 1.0, 1.0)
    hr, ndcg, mrr = metrics([3], 10)
    assert hr == 1.0 and ndcg == 0.5 and mrr == pytest.approx(1 / 3, abs=1e-15)
    assert metrics([11], 10) == (0.0, 0.0, 0.0)


def test_empty_ranks_error():
    with pytest.raises(DataError):
        metrics([], 10)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_against_bruteforce(V, seed):
    rng = np.random.default_rng(seed)
    rows = int(rng.integers(1, 6))
    scores = rng.integers(0, 4, (rows, V + 1)).astype(float)   # plenty of ties
    targets = rng.integers(1, V + 1, rows)
    got = rank_of_target(scores, targets)
    want = [brute_rank(scores[r], targets[r]) for r in range(rows)]
    assert got.tolist() == want
    for k in (1, 5, 10, 20, 50):
        assert metrics(got, k) == pytest.approx(brute_metrics(want, k), rel=0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    s = np.r_[-np.inf, rng.normal(size=25)]
    t = rng.integers(1, 26, 1)
    base = rank_of_target(s[None], t)
    for f in (np.exp, lambda x: 3 * x - 7, np.arctan):
        assert np.array_equal(rank_of_target(f(s)[None], t), base)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=40))
def test_monotone_in_k_and_ordered(ranks):
    prev = (0.0, 0.0, 0.0)
    for k in (10, 20, 50):
        hr, ndcg, mrr = metrics(ranks, k)
        assert 0 <= mrr <= ndcg <= hr <= 1
        assert hr >= prev[0] and ndcg >= prev[1] and mrr >= prev[2]
        prev = (hr, ndcg, mrr)


def test_report_outputs():
    rep = RankingReport.from_ranks([1, 3, 11], ks=(10, 20))
    assert rep[("hr", 10)] == pytest.approx(2 / 3)
    lines = rep.csv().splitlines()
    assert lines[0] == "metric,K,value"
    assert lines[1].startswith("hr,10,")
    assert len(lines) == 1 + 3 * 2
    assert "NDCG" in rep.table() and "(n=3)" in rep.table()
