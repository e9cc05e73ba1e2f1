"""Classical overlapping-SBM generator, the planted-community benchmark and truncated reconstruction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .autodiff import ContractError, DimensionError
from .graph import canonical_edges
from .rng import SeededRng

DEFAULT_OVERLAP = 3
BERNOULLI_BIAS = -2.0


@dataclass
class ClassicalOsbmParams:
    """Interaction W (K x K), sender/receiver propensities U, V, global bias w_star, prevalence alpha."""

    W: np.ndarray
    U: np.ndarray
    V: np.ndarray
    w_star: float
    alpha: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        k = self.W.shape[0]
        self.U = np.asarray(self.U, dtype=np.float64).reshape(-1)
        self.V = np.asarray(self.V, dtype=np.float64).reshape(-1)
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if self.W.shape != (k, k) or self.U.shape != (k,) or self.V.shape != (k,):
            raise DimensionError(f"W {self.W.shape}, U {self.U.shape}, V {self.V.shape} disagree")
        if self.alpha.shape != (k,) or np.any(self.alpha <= 0) or np.any(self.alpha >= 1):
            raise ContractError("alpha must hold K probabilities strictly inside (0, 1)")

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def augmented(self) -> np.ndarray:
        """[[W, U], [V^T, w_star]]."""
        top = np.concatenate([self.W, self.U[:, None]], axis=1)
        bottom = np.concatenate([self.V, [self.w_star]])[None, :]
        return np.concatenate([top, bottom], axis=0)

    @classmethod
    def inner_product(cls, k: int, bias: float = 0.0) -> "ClassicalOsbmParams":
        """W = I, no propensities: the logit is b_i . b_j + bias."""
        return cls(np.eye(k), np.zeros(k), np.zeros(k), bias, np.full(k, 0.5))


def osbm_edge_logit(b_i, b_j, params: ClassicalOsbmParams) -> float:
    """[b_i; 1]^T W~ [b_j; 1]."""
    b_i, b_j = np.asarray(b_i, dtype=np.float64), np.asarray(b_j, dtype=np.float64)
    if b_i.shape != (params.k,) or b_j.shape != (params.k,):
        raise DimensionError(f"membership shapes {b_i.shape}, {b_j.shape} vs K={params.k}")
    return float(np.append(b_i, 1.0) @ params.augmented @ np.append(b_j, 1.0))


def osbm_logit_matrix(memberships: np.ndarray, params: ClassicalOsbmParams) -> np.ndarray:
    aug = np.concatenate([memberships, np.ones((len(memberships), 1))], axis=1)
    return aug @ params.augmented @ aug.T


def block_memberships(n: int, k: int, overlap: int = DEFAULT_OVERLAP) -> np.ndarray:
    """k contiguous blocks; across every other boundary (0|1, 2|3, ...) the last
    ``overlap`` nodes of the left block also join the right block."""
    if n < 1 or k < 1 or k > n:
        raise ContractError(f"need 1 <= k <= n, got n={n}, k={k}")
    bounds = np.linspace(0, n, k + 1).round().astype(int)
    B = np.zeros((n, k), dtype=np.int64)
    for c in range(k):
        B[bounds[c]:bounds[c + 1], c] = 1
    for c in range(0, k - 1, 2):
        size = bounds[c + 1] - bounds[c]
        width = min(overlap, size)
        B[bounds[c + 1] - width:bounds[c + 1], c + 1] = 1
    return B


@dataclass
class SyntheticInstance:
    memberships: np.ndarray
    adjacency: np.ndarray
    hidden: np.ndarray
    probabilities: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.adjacency)

    @property
    def edges(self) -> np.ndarray:
        u, v = np.nonzero(np.triu(self.adjacency, 1))
        return np.stack([u, v], axis=1).astype(np.int64)

    def hidden_mask(self) -> np.ndarray:
        m = np.zeros_like(self.adjacency, dtype=bool)
        m[self.hidden[:, 0], self.hidden[:, 1]] = True
        return m | m.T

    @property
    def train_edges(self) -> np.ndarray:
        e = self.edges
        return e[~self.hidden_mask()[e[:, 0], e[:, 1]]]

    def hidden_labels(self) -> np.ndarray:
        return self.adjacency[self.hidden[:, 0], self.hidden[:, 1]].astype(np.int64)


def hidden_count(n: int, frac: float = 0.15) -> int:
    return int(round(frac * n * (n - 1) / 2))


def generate_synthetic(n: int = 100, k: int = 10, rng: SeededRng | None = None,
                       mode: str = "inner_product", bias: float | None = None,
                       sampling: str = "threshold", hidden_frac: float = 0.15,
                       params: ClassicalOsbmParams | None = None,
                       overlap: int = DEFAULT_OVERLAP) -> SyntheticInstance:
    """Planted overlapping blocks, edges from sigmoid(logit), and a uniform hidden pair mask.

    ``bias=None`` picks 0 for threshold sampling (edge iff the pair shares a
    community) and -2 for Bernoulli sampling (keeps the graph sparse).
    """
    if n < 2 or k < 1:
        raise ContractError("need n >= 2 and k >= 1")
    if sampling not in ("bernoulli", "threshold"):
        raise ContractError(f"unknown sampling {sampling!r}")
    rng = rng if rng is not None else SeededRng(0)
    if bias is None or (isinstance(bias, float) and math.isnan(bias)):
        bias = 0.0 if sampling == "threshold" else BERNOULLI_BIAS
    B = block_memberships(n, k, overlap)
    if mode == "inner_product":
        logits = (B @ B.T).astype(np.float64) + bias
    elif mode == "full_osbm":
        params = params if params is not None else ClassicalOsbmParams.inner_product(k, bias)
        if params.k != k:
            raise DimensionError(f"params have K={params.k}, generator K={k}")
        logits = osbm_logit_matrix(B.astype(np.float64), params)
        logits = 0.5 * (logits + logits.T)
    else:
        raise ContractError(f"unknown mode {mode!r}")
    probs = special.expit(logits)
    iu = np.triu_indices(n, 1)
    if sampling == "threshold":
        upper = probs[iu] > 0.5
    else:
        upper = rng.child("edges").uniform(len(iu[0])) < probs[iu]
    A = np.zeros((n, n), dtype=np.int64)
    A[iu] = upper
    A = A + A.T
    np.fill_diagonal(probs, 0.0)
    total = len(iu[0])
    pick = rng.child("hidden").permutation(total)[:hidden_count(n, hidden_frac)]
    hidden = canonical_edges(np.stack([iu[0][pick], iu[1][pick]], axis=1))
    return SyntheticInstance(B, A, hidden, probs)


# ------------------------------------------------------------- reconstruction


def truncated_reconstruction(model, dims: int, features=None) -> np.ndarray:
    """All-pairs sigmoid(<z~_u, z~_v>) using only the first ``dims`` latent columns."""
    from .training import decoded_embeddings

    if not 0 <= dims <= model.config.k:
        raise ContractError(f"dims must lie in [0, {model.config.k}], got {dims}")
    zt = decoded_embeddings(model, features, dims=dims)
    logits = zt @ zt.T
    return special.expit(0.5 * (logits + logits.T))


def dominant_blocks(memberships: np.ndarray, zt_norms: np.ndarray, count: int = 2) -> list[int]:
    """True blocks whose members carry the largest mean decoded-embedding norm."""
    B = np.asarray(memberships, dtype=bool)
    means = np.array([zt_norms[B[:, c]].mean() if B[:, c].any() else -np.inf for c in range(B.shape[1])])
    return [int(c) for c in np.argsort(-means, kind="stable")[:count]]


def block_gap(prob: np.ndarray, memberships: np.ndarray, blocks) -> tuple[float, float]:
    """Mean probability within the given blocks and across them (distinct pairs, exclusive members)."""
    B = np.asarray(memberships, dtype=bool)
    sets = []
    for c in blocks:
        only = B[:, c] & (B.sum(axis=1) == 1)
        sets.append(np.nonzero(only if only.sum() >= 2 else B[:, c])[0])
    within = []
    for s in sets:
        sub = prob[np.ix_(s, s)]
        within.append(sub[np.triu_indices(len(s), 1)])
    cross = [prob[np.ix_(sets[i], sets[j])].ravel()
             for i in range(len(sets)) for j in range(i + 1, len(sets))]
    return float(np.mean(np.concatenate(within))), float(np.mean(np.concatenate(cross)))
