"""Common-neighbor heuristics and heuristic-ranked hard negatives."""

from __future__ import annotations

import logging

import numpy as np
from scipy import sparse

from .autodiff import ContractError
from .graph import AdjacencyIndex, SamplingError, pair_keys, sample_negatives_uniform
from .metrics import RankedEval
from .rng import SeededRng

log = logging.getLogger(__name__)

KINDS = ("CN", "AA", "RA")
HEART_PROTOCOL = "heart-approx"


def _weights(kind: str, degree: np.ndarray) -> np.ndarray:
    deg = degree.astype(np.float64)
    w = np.zeros_like(deg)
    if kind == "CN":
        return np.ones_like(deg)
    if kind == "RA":
        np.divide(1.0, deg, out=w, where=deg > 0)
        return w
    if kind == "AA":
        # nodes of degree 1 can never be a common neighbor of two distinct endpoints
        np.divide(1.0, np.log(deg), out=w, where=deg > 1)
        return w
    raise ContractError(f"unknown heuristic {kind!r}; expected one of {KINDS}")


def heuristic_scores(kind: str, index: AdjacencyIndex, pairs) -> np.ndarray:
    """CN, AA or RA for each row of ``pairs``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros(0)
    if pairs.min() < 0 or pairs.max() >= index.num_nodes:
        raise ContractError(f"node id outside [0, {index.num_nodes})")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise ContractError("heuristics are defined for distinct endpoints only")
    w = _weights(kind, index.degree)
    adj = index.to_scipy()
    common = adj[pairs[:, 0]].multiply(adj[pairs[:, 1]]).tocsr()
    if kind == "AA" and common.nnz:
        assert np.all(index.degree[common.indices] >= 2), "common neighbor with degree < 2"
    return np.asarray(common @ w).ravel()


def heuristic_score(kind: str, index: AdjacencyIndex, pair) -> float:
    return float(heuristic_scores(kind, index, [pair])[0])


def _ranked_corruptions(anchor: int, ra_row, cn_row, index: AdjacencyIndex,
                        banned: set[int], count: int) -> list[int]:
    """Top ``count`` partners w of ``anchor`` by (RA desc, CN desc, id asc) among non-edges."""
    ra_row, cn_row = ra_row.tocsr(), cn_row.tocsr()
    w = cn_row.indices
    if w.size == 0 or count <= 0:
        return []
    cn = cn_row.data
    ra = np.asarray(ra_row[0, w].todense()).ravel()
    keep = (w != anchor) & ~index.has_edge(np.full(w.size, anchor), w)
    w, ra, cn = w[keep], ra[keep], cn[keep]
    order = np.lexsort((w, -cn, -ra))
    out: list[int] = []
    n = index.num_nodes
    for j in order:
        key = min(anchor, w[j]) * n + max(anchor, w[j])
        if key in banned:
            continue
        out.append(int(w[j]))
        banned.add(key)
        if len(out) == count:
            break
    return out


def heart_negatives(index: AdjacencyIndex, positives, n_neg: int, rng: SeededRng) -> RankedEval:
    """Heuristic hard negatives per positive (an approximation of the HeaRT protocol).

    For a positive (u, v) the corruptions (u, w) and (w, v) that share at least
    one neighbor with their anchor are ranked by RA, then CN, then node id, and
    the top n_neg/2 are taken from each side. Any shortfall is filled with
    uniform non-edges. ``index`` must hold every observed edge so that none of
    them can be drawn as a negative.
    """
    if n_neg < 1:
        raise ContractError(f"n_neg must be >= 1, got {n_neg}")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    n = index.num_nodes
    adj = index.to_scipy()
    deg = index.degree.astype(np.float64)
    inv_deg = sparse.diags(np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0))
    ra_mat = (adj @ inv_deg @ adj).tocsr()
    cn_mat = (adj @ adj).tocsr()
    total_non_edges = n * (n - 1) // 2 - index.num_edges
    per_side = (n_neg + 1) // 2, n_neg // 2
    lists = []
    short = 0
    for i, (u, v) in enumerate(positives):
        banned: set[int] = set()
        chosen = []
        for anchor, take in ((u, per_side[0]), (v, per_side[1])):
            for w in _ranked_corruptions(int(anchor), ra_mat[anchor], cn_mat[anchor], index, banned, take):
                chosen.append((min(anchor, w), max(anchor, w)))
        need = n_neg - len(chosen)
        if need > 0:
            avail = total_non_edges - len(chosen)
            take = min(need, avail)
            if take < need:
                short += 1
            if take > 0:
                exclude = np.array(chosen, dtype=np.int64).reshape(-1, 2)
                try:
                    fill = sample_negatives_uniform(index, take, rng.child(f"fill{i}"), exclude=exclude)
                except SamplingError:
                    fill = np.zeros((0, 2), dtype=np.int64)
                if len(fill):
                    # uniform fill may repeat when the space is tight; keep distinct pairs only
                    keys = pair_keys(fill, n)
                    _, first = np.unique(keys, return_index=True)
                    fill = fill[np.sort(first)]
                chosen.extend(map(tuple, fill))
        lists.append(np.array(chosen, dtype=np.int64).reshape(-1, 2))
    if short:
        log.warning("%d positive(s) got fewer than %d hard negatives: candidate space exhausted",
                    short, n_neg)
    return RankedEval(positives, lists, protocol=HEART_PROTOCOL)


def uniform_ranked_eval(index: AdjacencyIndex, positives, n_neg: int, rng: SeededRng) -> RankedEval:
    """Each positive against its own ``n_neg`` uniform non-edges."""
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    lists = [sample_negatives_uniform(index, n_neg, rng.child(f"pos{i}")) for i in range(len(positives))]
    return RankedEval(positives, lists, protocol="uniform")
