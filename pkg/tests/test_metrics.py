import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osbmlink.autodiff import ContractError
from osbmlink.metrics import (HITS_KS, RankedEval, auc, evaluate_ranked, evaluate_scores, hits_at_k,
                              mrr, rank_of_positive, ranks)


def auc_pairwise(pos, neg):
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def rank_by_sort(p, negs):
    """Average 1-based position of the positive among all tied candidates, rounded up."""
    scores = np.concatenate([[p], negs])
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    positions = [pos + 1 for pos, i in enumerate(order) if scores[i] == p]
    return math.ceil(sum(positions) / len(positions))


def test_auc_examples():
    assert auc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert auc([0.8], [0.9, 0.1]) == 0.5
    assert auc([0.5], [0.5]) == 0.5
    with pytest.raises(ContractError):
        auc([], [0.1])


def test_mrr_examples():
    assert mrr([5.0, 4.0], [[1.0, 2.0], [0.0]]) == 1.0
    assert mrr([1.0], [[2.0, 3.0, 4.0, 0.0]]) == 0.25
    assert mrr([3.0, 1.0], [[0.0], [2.0]]) == 0.75


def test_hits_examples():
    r = {"pos": [10.0, 10.0, 10.0], "negs": [[0.0], [11, 12, 0.0], [11, 12, 13, 14, 15, 16]]}
    np.testing.assert_array_equal(ranks(r["pos"], r["negs"]), [1, 3, 7])
    assert hits_at_k(r["pos"], r["negs"], [3])[3] == pytest.approx(2 / 3)
    assert hits_at_k(r["pos"], r["negs"], [8])[8] == 1.0
    assert hits_at_k([2.0, 3.0], [[1.0], [0.0, 1.0]], [1])[1] == 1.0
    with pytest.raises(ContractError):
        hits_at_k([1.0], [[0.0]], [0])


def test_tie_rank_rounds_up_after_averaging():
    assert rank_of_positive(1.0, [1.0]) == 2  # positions 1, 2 -> 1.5 -> 2
    assert rank_of_positive(1.0, [1.0, 1.0]) == 2  # positions 1..3 -> 2
    assert rank_of_positive(1.0, [2.0, 1.0, 1.0, 1.0]) == 4  # 2..5 -> 3.5 -> 4


def test_empty_candidate_list_rejected():
    with pytest.raises(ContractError):
        ranks([1.0], [[]])


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force(seed):
    r = np.random.default_rng(seed)
    n_pos = int(r.integers(1, 8))
    # coarse grid of values so ties are common
    pos = r.integers(0, 6, size=n_pos).astype(float)
    negs = [r.integers(0, 6, size=int(r.integers(1, 12))).astype(float) for _ in range(n_pos)]
    pooled = np.concatenate(negs)
    assert auc(pos, pooled) == pytest.approx(auc_pairwise(pos, pooled), abs=1e-15)
    want = [rank_by_sort(p, n) for p, n in zip(pos, negs)]
    m = evaluate_scores(pos, negs)
    assert m.ranks == want
    assert m.mrr == pytest.approx(np.mean(1 / np.array(want)), abs=1e-15)
    for k in HITS_KS:
        assert m.hits[k] == np.mean(np.array(want) <= k)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_rank_invariance_under_monotone_transform(seed):
    r = np.random.default_rng(seed)
    pos = r.normal(size=5).round(1)
    negs = [r.normal(size=int(r.integers(1, 30))).round(1) for _ in range(5)]
    f = lambda x: np.exp(3 * np.asarray(x)) + 7  # noqa: E731
    a = evaluate_scores(pos, negs, k_values=(1, 3, 10))
    b = evaluate_scores(f(pos), [f(n) for n in negs], k_values=(1, 3, 10))
    assert a.auc == b.auc and a.mrr == b.mrr and a.hits == b.hits and a.ranks == b.ranks


def test_mrr_equals_mean_reciprocal_of_recorded_ranks():
    m = evaluate_scores([0.3, 0.9, 0.1], [[0.5, 0.2], [0.1], [0.4, 0.5, 0.6]])
    assert m.mrr == np.mean([1 / x for x in m.ranks])


def test_evaluate_ranked_and_json():
    ranked = RankedEval([[0, 1], [2, 3]], [[[0, 2], [0, 3]], [[1, 3]]], protocol="uniform")
    table = {(0, 1): 5.0, (2, 3): 1.0, (0, 2): 6.0, (0, 3): 0.0, (1, 3): 0.5}
    m = evaluate_ranked(ranked, lambda pairs: np.array([table[tuple(p)] for p in pairs.tolist()]))
    assert m.ranks == [2, 1] and m.mrr == 0.75
    body = m.to_json(len(ranked), ranked.n_neg_per_pos, ranked.protocol)
    assert list(body) == ["auc", "mrr", "hits@10", "hits@20", "hits@50", "hits@100", "n_pos",
                          "n_neg_per_pos", "protocol"]
    assert body["n_pos"] == 2 and body["n_neg_per_pos"] == 2


def test_ranked_eval_list_count_contract():
    with pytest.raises(ContractError):
        RankedEval([[0, 1]], [])
