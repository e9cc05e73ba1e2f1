import numpy as np
import pytest
from scipy import special

from osbmlink.autodiff import ContractError, DimensionError
from osbmlink.config import TrainConfig
from osbmlink.rng import SeededRng
from osbmlink.synthetic import (ClassicalOsbmParams, block_gap, block_memberships,
                                dominant_blocks, generate_synthetic, hidden_count,
                                osbm_edge_logit, truncated_reconstruction)
from osbmlink.training import decoded_embeddings, init_model, score_pairs, train


def params(k, W=None, U=None, V=None, w=0.0):
    return ClassicalOsbmParams(np.zeros((k, k)) if W is None else W,
                               np.zeros(k) if U is None else U,
                               np.zeros(k) if V is None else V, w, np.full(k, 0.5))


def test_edge_logit_examples():
    p0 = params(3)
    assert osbm_edge_logit([1, 0, 1], [0, 1, 1], p0) == 0.0
    assert special.expit(0.0) == 0.5
    W = np.zeros((3, 3))
    W[0, 0] = 2
    assert osbm_edge_logit([1, 0, 0], [1, 0, 0], params(3, W)) == 2.0
    assert osbm_edge_logit([0, 0, 0], [0, 0, 0], params(3, w=-3.0)) == -3.0


def test_augmented_layout():
    r = np.random.default_rng(0)
    W, U, V = r.normal(size=(3, 3)), r.normal(size=3), r.normal(size=3)
    aug = params(3, W, U, V, 0.7).augmented
    assert np.array_equal(aug[:3, :3], W) and np.array_equal(aug[:3, 3], U)
    assert np.array_equal(aug[3, :3], V) and aug[3, 3] == 0.7


def test_augmented_form_equals_four_term_expansion():
    r = np.random.default_rng(1)
    k = 6
    W, U, V = r.normal(size=(k, k)), r.normal(size=k), r.normal(size=k)
    p = params(k, W, U, V, -0.4)
    for _ in range(1000):
        bi, bj = r.integers(0, 2, size=k), r.integers(0, 2, size=k)
        want = bi @ W @ bj + bi @ U + V @ bj + -0.4
        assert osbm_edge_logit(bi, bj, p) == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_params_contracts():
    with pytest.raises(DimensionError):
        osbm_edge_logit([1, 0], [1, 0, 0], params(3))
    with pytest.raises(ContractError):
        ClassicalOsbmParams(np.eye(2), np.zeros(2), np.zeros(2), 0.0, np.array([0.5, 1.0]))


def test_block_layout():
    B = block_memberships(100, 10)
    assert B.shape == (100, 10)
    assert np.all(B.sum(axis=1) >= 1)
    # every other boundary overlaps by 3 nodes
    assert B[7:10, 1].sum() == 3 and B[17:20, 2].sum() == 0 and B[27:30, 3].sum() == 3
    assert (B.sum(axis=1) == 2).sum() == 15


def test_inner_product_probabilities():
    inst = generate_synthetic(rng=SeededRng(0))
    B = inst.memberships
    shared = B @ B.T
    i, j = np.argwhere(np.triu(shared == 1, 1))[0]
    assert inst.probabilities[i, j] == pytest.approx(0.7310585786300049, abs=1e-12)
    i, j = np.argwhere(np.triu(shared == 0, 1))[0]
    assert inst.probabilities[i, j] == 0.5 and inst.adjacency[i, j] == 0


def test_threshold_edges_follow_shared_membership():
    inst = generate_synthetic(rng=SeededRng(0))
    shared = inst.memberships @ inst.memberships.T
    off = ~np.eye(100, dtype=bool)
    assert np.array_equal(inst.adjacency[off] == 1, shared[off] > 0)


@pytest.mark.parametrize("sampling", ["threshold", "bernoulli"])
def test_instance_invariants(sampling):
    inst = generate_synthetic(rng=SeededRng(4), sampling=sampling)
    A = inst.adjacency
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 0)
    assert len(inst.hidden) == hidden_count(100) == round(0.15 * 4950)
    assert np.all(inst.hidden[:, 0] < inst.hidden[:, 1])
    assert len({tuple(p) for p in inst.hidden.tolist()}) == len(inst.hidden)
    train = {tuple(e) for e in inst.train_edges.tolist()}
    assert not train & {tuple(p) for p in inst.hidden.tolist()}
    assert len(train) + inst.hidden_labels().sum() == len(inst.edges)


def test_generation_is_seeded():
    a = generate_synthetic(rng=SeededRng(7), sampling="bernoulli")
    b = generate_synthetic(rng=SeededRng(7), sampling="bernoulli")
    c = generate_synthetic(rng=SeededRng(8), sampling="bernoulli")
    assert np.array_equal(a.adjacency, b.adjacency) and np.array_equal(a.hidden, b.hidden)
    assert not np.array_equal(a.adjacency, c.adjacency)


def test_bernoulli_matches_target_probability():
    # fixed pair sharing one community, bias -2: p = sigmoid(-1)
    hits = 0
    reps = 100
    for s in range(reps):
        inst = generate_synthetic(rng=SeededRng(s), sampling="bernoulli")
        hits += inst.adjacency[0, 1]
    p = special.expit(-1.0)
    sigma = np.sqrt(reps * p * (1 - p))
    assert abs(hits - reps * p) <= 3 * sigma


def test_full_osbm_mode_matches_inner_product_under_identity():
    a = generate_synthetic(rng=SeededRng(0), mode="full_osbm")
    b = generate_synthetic(rng=SeededRng(0))
    np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-15)


def test_generator_contracts():
    with pytest.raises(ContractError):
        generate_synthetic(n=1)
    with pytest.raises(ContractError):
        generate_synthetic(sampling="coin")
    with pytest.raises(ContractError):
        generate_synthetic(mode="other")


@pytest.fixture(scope="module")
def small_model():
    inst = generate_synthetic(n=30, k=3, rng=SeededRng(0))
    cfg = TrainConfig(layers=2, heads=2, hidden=16, k=4, d_exp=4, seed=0, epochs=2)
    return train(30, inst.train_edges, cfg)[0]


def test_reconstruction_dims_k_is_full(small_model):
    prob = truncated_reconstruction(small_model, small_model.config.k)
    pairs = np.array([(i, j) for i in range(30) for j in range(30)])
    want = special.expit(score_pairs(small_model, pairs)).reshape(30, 30)
    np.testing.assert_allclose(prob, want, rtol=1e-12, atol=0)
    assert np.array_equal(prob, prob.T)


def test_reconstruction_dims_zero_is_constant(small_model):
    prob = truncated_reconstruction(small_model, 0)
    zt = decoded_embeddings(small_model, dims=0)[0]
    assert np.allclose(prob, special.expit(zt @ zt), rtol=1e-14, atol=0)
    assert np.ptp(prob) <= 1e-14


def test_reconstruction_dims_contract(small_model):
    with pytest.raises(ContractError):
        truncated_reconstruction(small_model, small_model.config.k + 1)
    with pytest.raises(ContractError):
        truncated_reconstruction(small_model, -1)


def test_block_gap_on_planted_probabilities():
    inst = generate_synthetic(rng=SeededRng(0))
    within, cross = block_gap(inst.probabilities, inst.memberships, [0, 5])
    assert within == pytest.approx(special.expit(1.0)) and cross == 0.5
    norms = np.zeros(100)
    norms[50:60] = 3.0
    norms[10:20] = 2.0
    assert dominant_blocks(inst.memberships, norms) == [5, 1]


def test_untrained_model_shapes():
    model = init_model(30, [[0, 1], [1, 2], [5, 9]], TrainConfig(k=4, hidden=16, heads=2,
                                                                     layers=2, d_exp=4))
    assert truncated_reconstruction(model, 2).shape == (30, 30)
