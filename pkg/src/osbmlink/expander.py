"""Random-permutation expander overlay and the typed attention topology."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .autodiff import ContractError
from .graph import canonical_edges
from .rng import SeededRng

LOCAL, EXPANDER, SELF = 0, 1, 2
EDGE_TYPES = ("local", "expander", "self")
ABLATIONS = ("full", "no_expander", "no_local")


@dataclass(frozen=True)
class ExpanderConfig:
    d_exp: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.d_exp <= 0 or self.d_exp % 2:
            raise ContractError(f"d_exp must be a positive even integer, got {self.d_exp}")


def expander_from_permutations(perms) -> np.ndarray:
    """Union of {i, p(i)} over the given permutations, minus fixed points and repeats."""
    pairs = [np.stack([np.arange(len(p)), np.asarray(p)], axis=1) for p in perms]
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return canonical_edges(np.concatenate(pairs))


def build_expander(num_nodes: int, config: ExpanderConfig, rng: SeededRng | None = None) -> np.ndarray:
    if num_nodes < 2:
        raise ContractError("expander needs at least two nodes")
    if config.d_exp % 2:
        raise ContractError(f"d_exp must be even, got {config.d_exp}")
    rng = rng if rng is not None else SeededRng(config.seed)
    return expander_from_permutations(rng.permutation(num_nodes) for _ in range(config.d_exp // 2))


@dataclass
class AttentionTopology:
    """Directed typed edges sorted by destination (then source, then type)."""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def count(self, edge_type: int) -> int:
        return int(np.sum(self.etype == edge_type))

    def stats(self) -> dict[str, int]:
        return {"n_local": self.count(LOCAL), "n_expander": self.count(EXPANDER),
                "n_self": self.count(SELF)}

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)

    def permuted(self, perm: np.ndarray) -> "AttentionTopology":
        """Relabel node i as perm[i]."""
        return _assemble(self.num_nodes, perm[self.src], perm[self.dst], self.etype)


def _assemble(n, src, dst, etype) -> AttentionTopology:
    order = np.lexsort((etype, src, dst))
    return AttentionTopology(n, np.asarray(src, np.int64)[order],
                             np.asarray(dst, np.int64)[order], np.asarray(etype, np.int64)[order])


def build_topology(num_nodes: int, local_edges, expander_edges, add_self_loops: bool = True,
                   ablation: str = "full") -> AttentionTopology:
    if ablation not in ABLATIONS:
        raise ContractError(f"unknown ablation {ablation!r}")
    local = canonical_edges(local_edges) if ablation != "no_local" else np.zeros((0, 2), np.int64)
    exp = canonical_edges(expander_edges) if ablation != "no_expander" else np.zeros((0, 2), np.int64)
    for e in (local, exp):
        if len(e) and e.max() >= num_nodes:
            raise ContractError("edge endpoint outside [0, N)")
    if len(exp) and len(local):
        lk = local[:, 0] * num_nodes + local[:, 1]
        ek = exp[:, 0] * num_nodes + exp[:, 1]
        exp = exp[~np.isin(ek, lk)]
    src = [local[:, 0], local[:, 1], exp[:, 0], exp[:, 1]]
    dst = [local[:, 1], local[:, 0], exp[:, 1], exp[:, 0]]
    etype = [np.full(2 * len(local), LOCAL), np.full(2 * len(exp), EXPANDER)]
    if add_self_loops:
        nodes = np.arange(num_nodes)
        src.append(nodes)
        dst.append(nodes)
        etype.append(np.full(num_nodes, SELF))
    return _assemble(num_nodes, np.concatenate(src), np.concatenate(dst), np.concatenate(etype))


def bfs_diameter(edges_or_topology, num_nodes: int | None = None):
    """Exact diameter by BFS from every node, or ``"disconnected"``."""
    if isinstance(edges_or_topology, AttentionTopology):
        num_nodes = edges_or_topology.num_nodes
        pairs = np.stack([edges_or_topology.src, edges_or_topology.dst], axis=1)
    else:
        pairs = np.asarray(edges_or_topology, dtype=np.int64).reshape(-1, 2)
        if num_nodes is None:
            num_nodes = int(pairs.max()) + 1 if len(pairs) else 1
    if num_nodes < 1:
        raise ContractError("need at least one node")
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    adj = sparse.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                            shape=(num_nodes, num_nodes))
    adj = ((adj + adj.T) > 0).astype(np.float64).tocsr()
    # level-synchronous BFS from all sources at once; column s is the frontier of source s
    seen = np.eye(num_nodes, dtype=bool)
    frontier = np.eye(num_nodes)
    depth = 0
    while True:
        reached = (adj @ frontier) > 0
        reached &= ~seen
        if not reached.any():
            break
        seen |= reached
        frontier = reached.astype(np.float64)
        depth += 1
    if not seen.all():
        return "disconnected"
    return depth


def degree_histogram(edges, num_nodes: int) -> dict[int, int]:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    deg = np.bincount(e.ravel(), minlength=num_nodes)
    vals, counts = np.unique(deg, return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, counts)}
