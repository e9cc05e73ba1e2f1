"""AUC, MRR and Hits@K over ranked candidate lists."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .autodiff import ContractError

HITS_KS = (10, 20, 50, 100)


@dataclass
class RankedEval:
    """Each positive pair with its own negative candidate list.

    ``negatives[i]`` is an (n_i, 2) int array of candidate pairs for ``positives[i]``.
    """

    positives: np.ndarray
    negatives: list[np.ndarray]
    protocol: str = "uniform"

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.int64).reshape(-1, 2)
        self.negatives = [np.asarray(n, dtype=np.int64).reshape(-1, 2) for n in self.negatives]
        if len(self.negatives) != len(self.positives):
            raise ContractError(f"{len(self.positives)} positives but "
                                f"{len(self.negatives)} candidate lists")

    def __len__(self) -> int:
        return len(self.positives)

    @property
    def n_neg_per_pos(self) -> int:
        return max((len(n) for n in self.negatives), default=0)

    def all_negatives(self) -> np.ndarray:
        if not self.negatives:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate(self.negatives)


@dataclass
class Metrics:
    auc: float
    mrr: float
    hits: dict[int, float]
    ranks: list[int] = field(default_factory=list)

    def to_json(self, n_pos: int, n_neg_per_pos: int, protocol: str) -> dict:
        out = {"auc": self.auc, "mrr": self.mrr}
        out.update({f"hits@{k}": self.hits[k] for k in HITS_KS})
        out.update({"n_pos": int(n_pos), "n_neg_per_pos": int(n_neg_per_pos), "protocol": protocol})
        return out


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC; tied scores get midranks and so count one half."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ContractError("auc needs at least one positive and one negative score")
    ranks = stats.rankdata(np.concatenate([pos, neg]), method="average")
    n_pos, n_neg = pos.size, neg.size
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def rank_of_positive(pos_score: float, neg_scores) -> int:
    """1-based rank of the positive among itself and its negatives.

    Ties take the average of the tied positions, rounded up.
    """
    neg = np.asarray(neg_scores, dtype=np.float64)
    greater = int(np.sum(neg > pos_score))
    ties = int(np.sum(neg == pos_score))
    return int(math.ceil(greater + 1 + ties / 2.0))


def ranks(pos_scores, neg_lists) -> np.ndarray:
    """Per-positive ranks; ``neg_lists[i]`` holds the negative scores for positive i."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64).ravel()
    if len(neg_lists) != len(pos_scores):
        raise ContractError("one negative score list per positive required")
    out = np.empty(len(pos_scores), dtype=np.int64)
    for i, (p, negs) in enumerate(zip(pos_scores, neg_lists)):
        if len(negs) == 0:
            raise ContractError(f"positive {i} has no negative candidates")
        out[i] = rank_of_positive(p, negs)
    return out


def mrr(pos_scores, neg_lists) -> float:
    r = ranks(pos_scores, neg_lists)
    if r.size == 0:
        raise ContractError("mrr of an empty evaluation")
    return float(np.mean(1.0 / r))


def hits_at_k(pos_scores, neg_lists, k_values=HITS_KS) -> dict[int, float]:
    r = ranks(pos_scores, neg_lists)
    out = {}
    for k in k_values:
        if k < 1:
            raise ContractError(f"k must be >= 1, got {k}")
        out[int(k)] = float(np.mean(r <= k)) if r.size else 0.0
    return out


def evaluate_scores(pos_scores, neg_lists, k_values=HITS_KS) -> Metrics:
    """All ranking metrics from per-positive score lists.

    AUC pools every positive against every negative candidate.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64).ravel()
    r = ranks(pos_scores, neg_lists)
    pooled = np.concatenate([np.asarray(n, dtype=np.float64).ravel() for n in neg_lists])
    return Metrics(auc=auc(pos_scores, pooled), mrr=float(np.mean(1.0 / r)),
                   hits={int(k): float(np.mean(r <= k)) for k in k_values},
                   ranks=[int(x) for x in r])


def evaluate_ranked(ranked: RankedEval, score_fn, k_values=HITS_KS) -> Metrics:
    """Score every pair in ``ranked`` with ``score_fn(pairs) -> scores`` and rank."""
    pos_scores = np.asarray(score_fn(ranked.positives), dtype=np.float64)
    flat = score_fn(ranked.all_negatives()) if len(ranked) else np.zeros(0)
    bounds = np.cumsum([0] + [len(n) for n in ranked.negatives])
    neg_lists = [flat[bounds[i]:bounds[i + 1]] for i in range(len(ranked))]
    return evaluate_scores(pos_scores, neg_lists, k_values)
