import math

import numpy as np
import pytest

from osbmlink.autodiff import ContractError
from osbmlink.expander import (EXPANDER, LOCAL, SELF, ExpanderConfig, bfs_diameter, build_expander,
                               build_topology, expander_from_permutations)
from osbmlink.rng import SeededRng


def edge_set(e):
    return set(map(tuple, np.asarray(e).tolist()))


def test_cyclic_shift_permutation():
    e = expander_from_permutations([np.array([1, 2, 3, 0])])
    assert edge_set(e) == {(0, 1), (1, 2), (2, 3), (0, 3)}
    assert np.all(np.bincount(e.ravel(), minlength=4) == 2)


def test_identity_permutation_is_empty():
    assert len(expander_from_permutations([np.arange(4)])) == 0


def test_involution_dedups():
    assert edge_set(expander_from_permutations([np.array([1, 0, 3, 2])])) == {(0, 1), (2, 3)}


def test_odd_degree_rejected():
    with pytest.raises(ContractError):
        ExpanderConfig(d_exp=3)


@pytest.mark.parametrize("n", [16, 128, 1024])
@pytest.mark.parametrize("seed", range(5))
def test_expander_degree_loops_dups(n, seed):
    e = build_expander(n, ExpanderConfig(8, seed), SeededRng(seed))
    assert np.all(e[:, 0] < e[:, 1])
    assert len(edge_set(e)) == len(e)
    assert np.bincount(e.ravel(), minlength=n).max() <= 8


def test_expander_needs_two_nodes():
    with pytest.raises(ContractError):
        build_expander(1, ExpanderConfig(2))


def test_topology_direct_expansion():
    t = build_topology(2, [[0, 1]], np.zeros((0, 2)))
    got = set(zip(t.src.tolist(), t.dst.tolist(), t.etype.tolist()))
    assert got == {(0, 1, LOCAL), (1, 0, LOCAL), (0, 0, SELF), (1, 1, SELF)}


def test_topology_local_precedence():
    t = build_topology(2, [[0, 1]], [[1, 0]], add_self_loops=False)
    assert t.num_edges == 2 and t.count(LOCAL) == 2 and t.count(EXPANDER) == 0


def test_topology_ablations():
    local, exp = [[0, 1], [1, 2]], [[0, 2], [1, 3]]
    assert build_topology(4, local, exp, ablation="no_expander").count(EXPANDER) == 0
    assert build_topology(4, local, exp, ablation="no_local").count(LOCAL) == 0
    with pytest.raises(ContractError):
        build_topology(4, local, exp, ablation="nope")


def test_topology_edge_count_formula(rng):
    n = 30
    local = rng.integers(0, n, size=(50, 2))
    local = local[local[:, 0] != local[:, 1]]
    exp = build_expander(n, ExpanderConfig(6), rng)
    t = build_topology(n, local, exp)
    lset = {(min(a, b), max(a, b)) for a, b in local.tolist()}
    exp_only = edge_set(exp) - lset
    assert t.num_edges == 2 * len(lset) + 2 * len(exp_only) + n
    assert np.all(t.in_degree() >= 1)
    triples = set(zip(t.src.tolist(), t.dst.tolist(), t.etype.tolist()))
    assert len(triples) == t.num_edges
    directed = set(zip(t.src.tolist(), t.dst.tolist()))
    assert all((d, s) in directed for s, d in directed)


def test_bfs_examples():
    assert bfs_diameter([[0, 1], [1, 2], [2, 3]], 4) == 3
    assert bfs_diameter([[a, b] for a in range(4) for b in range(a + 1, 4)], 4) == 1
    assert bfs_diameter([[0, 1], [2, 3]], 4) == "disconnected"
    assert bfs_diameter(np.zeros((0, 2)), 1) == 0


def test_bfs_on_topology_ignores_self_edges():
    t = build_topology(4, [[0, 1], [1, 2], [2, 3]], np.zeros((0, 2)))
    assert bfs_diameter(t) == 3


def test_bfs_matches_networkx(rng):
    nx = pytest.importorskip("networkx")
    for s in range(5):
        e = build_expander(64, ExpanderConfig(4), SeededRng(s))
        g = nx.Graph()
        g.add_nodes_from(range(64))
        g.add_edges_from(e.tolist())
        want = nx.diameter(g) if nx.is_connected(g) else "disconnected"
        assert bfs_diameter(e, 64) == want


def test_expander_diameter_is_logarithmic_small():
    n = 256
    bound = 2 * math.ceil(math.log2(n))
    diams = [bfs_diameter(build_expander(n, ExpanderConfig(8), SeededRng(s)), n) for s in range(10)]
    assert all(d != "disconnected" and d <= bound for d in diams)
