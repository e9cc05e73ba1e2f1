"""Undirected graphs, adjacency indexing, edge splits and negative sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ContractError
from .rng import SeededRng

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


def canonical_edges(pairs) -> np.ndarray:
    """Sorted (u < v) unique pairs as an (E, 2) int array; self-pairs dropped."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    arr = np.sort(arr, axis=1)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if len(arr) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


def pair_keys(pairs: np.ndarray, n: int) -> np.ndarray:
    pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
    return pairs[:, 0] * n + pairs[:, 1]


@dataclass
class Graph:
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray | None = None
    self_loops_dropped: int = 0

    def __post_init__(self):
        self.edges = canonical_edges(self.edges)
        if self.num_nodes <= 0:
            raise ContractError("graph needs at least one node")
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= self.num_nodes):
            raise ContractError("edge endpoint outside [0, N)")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.shape[0] != self.num_nodes:
                raise ContractError(
                    f"feature rows {self.features.shape[0]} != num_nodes {self.num_nodes}")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def with_edges(self, edges) -> "Graph":
        return Graph(self.num_nodes, edges, self.features)


@dataclass
class AdjacencyIndex:
    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    keys: np.ndarray = field(repr=False)

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def has_edge(self, u, v):
        """Membership for scalars or arrays of endpoints."""
        key = np.minimum(u, v) * self.num_nodes + np.maximum(u, v)
        pos = np.searchsorted(self.keys, key)
        pos = np.minimum(pos, max(len(self.keys) - 1, 0))
        hit = (self.keys[pos] == key) if len(self.keys) else np.zeros_like(key, dtype=bool)
        return hit & (np.asarray(u) != np.asarray(v))

    @property
    def num_edges(self) -> int:
        return len(self.keys)

    def to_scipy(self):
        from scipy import sparse

        data = np.ones(len(self.indices))
        return sparse.csr_matrix((data, self.indices, self.indptr),
                                 shape=(self.num_nodes, self.num_nodes))


def build_index(edges, num_nodes: int) -> AdjacencyIndex:
    e = canonical_edges(edges)
    if len(e) and (e.min() < 0 or e.max() >= num_nodes):
        raise ContractError(f"edge endpoint outside [0, {num_nodes})")
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return AdjacencyIndex(num_nodes, indptr, dst, np.sort(pair_keys(e, num_nodes)))


# ------------------------------------------------------------------------ I/O


def load_edge_list(path, num_nodes: int | None = None) -> Graph:
    """Read whitespace-separated integer pairs.

    Lines starting with ``#`` are comments; an optional first directive line
    ``N <count>`` fixes the node count.
    """
    text = Path(path).read_text(encoding="utf-8")
    pairs: list[tuple[int, int]] = []
    n_directive = None
    loops = 0
    max_id = -1
    seen_content = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if not seen_content and parts[0] == "N" and len(parts) == 2:
            try:
                n_directive = int(parts[1])
            except ValueError:
                raise GraphFormatError(f"line {lineno}: bad node-count directive {raw!r}") from None
            seen_content = True
            continue
        seen_content = True
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected two integers, got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: expected two integers, got {raw!r}") from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"line {lineno}: negative node id")
        max_id = max(max_id, u, v)
        if u == v:
            loops += 1
            continue
        pairs.append((u, v))
    if not seen_content:
        raise GraphFormatError(f"{path}: empty edge list")
    if loops:
        log.warning("dropped %d self-loop line(s) from %s", loops, path)
    if num_nodes is None:
        num_nodes = n_directive if n_directive is not None else max_id + 1
    if num_nodes <= max_id:
        raise GraphFormatError(f"node id {max_id} exceeds declared count {num_nodes}")
    g = Graph(num_nodes, np.array(pairs, dtype=np.int64).reshape(-1, 2))
    g.self_loops_dropped = loops
    return g


def save_edge_list(graph_or_edges, path, num_nodes: int | None = None) -> None:
    if isinstance(graph_or_edges, Graph):
        edges, num_nodes = graph_or_edges.edges, graph_or_edges.num_nodes
    else:
        edges = canonical_edges(graph_or_edges)
    lines = [] if num_nodes is None else [f"N {num_nodes}"]
    lines += [f"{u} {v}" for u, v in edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path, expected_n: int) -> np.ndarray:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            rows.append([float(x) for x in raw.split(",")])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-numeric feature value") from None
    if len(rows) != expected_n:
        raise GraphFormatError(f"expected {expected_n} feature rows, found {len(rows)}")
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise GraphFormatError(f"ragged feature rows, widths {sorted(widths)}")
    return np.array(rows, dtype=np.float64).reshape(expected_n, -1)


# ---------------------------------------------------------------------- split


@dataclass
class EdgeSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int | None = None


def largest_remainder(total: int, ratios) -> list[int]:
    quotas = [total * r for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    short = total - sum(counts)
    # ties in the remainder go to the earlier bucket
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def split_edges(graph: Graph, r_train: float, r_valid: float, r_test: float,
                rng: SeededRng) -> EdgeSplit:
    ratios = (r_train, r_valid, r_test)
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9 or r_train <= 0:
        raise ContractError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    n_tr, n_va, _ = largest_remainder(graph.num_edges, ratios)
    perm = rng.permutation(graph.num_edges)
    shuffled = graph.edges[perm]
    return EdgeSplit(canonical_edges(shuffled[:n_tr]),
                     canonical_edges(shuffled[n_tr:n_tr + n_va]),
                     canonical_edges(shuffled[n_tr + n_va:]),
                     seed=rng.seed)


# ------------------------------------------------------------------ negatives


def sample_negatives_uniform(index: AdjacencyIndex, count: int, rng: SeededRng,
                             exclude=None) -> np.ndarray:
    """Uniform non-edges by rejection; returned as canonical (u < v) rows."""
    n = index.num_nodes
    total = n * (n - 1) // 2
    excl = np.zeros(0, dtype=np.int64) if exclude is None or len(exclude) == 0 \
        else np.unique(pair_keys(exclude, n))
    excl_extra = len(np.setdiff1d(excl, index.keys, assume_unique=True)) if len(excl) else 0
    space = total - index.num_edges - excl_extra
    if space <= 0 or count > 0 and n < 2:
        raise SamplingError("no candidate non-edges to sample from")
    if count <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    allow_dupes = space < 2 * count
    if allow_dupes:
        log.warning("candidate space %d < 2 x %d; negatives may repeat", space, count)
    out: list[np.ndarray] = []
    have = 0
    seen = np.zeros(0, dtype=np.int64)
    while have < count:
        want = max(2 * (count - have), 64)
        u = rng.integers(0, n, size=want)
        v = rng.integers(0, n, size=want)
        ok = u != v
        u, v = u[ok], v[ok]
        key = np.minimum(u, v) * n + np.maximum(u, v)
        ok = ~index.has_edge(u, v)
        if len(excl):
            ok &= ~np.isin(key, excl)
        key = key[ok]
        if not allow_dupes:
            _, first = np.unique(key, return_index=True)
            key = key[np.sort(first)]
            key = key[~np.isin(key, seen)]
            seen = np.concatenate([seen, key])
        key = key[:count - have]
        out.append(key)
        have += len(key)
    keys = np.concatenate(out)
    return np.stack([keys // n, keys % n], axis=1)
