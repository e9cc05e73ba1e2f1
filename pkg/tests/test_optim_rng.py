import numpy as np
import pytest

from osbmlink.autodiff import ContractError
from osbmlink.optim import ParamStore, adam_step, clip_global_norm, global_norm
from osbmlink.rng import EULER_GAMMA, SeededRng, sample_noise


def test_clip_under_threshold_unchanged():
    g = {"a": np.array([3.0, 0.0])}
    assert clip_global_norm(g, 5.0)["a"] is g["a"]


def test_clip_halves_when_norm_is_twice_the_max():
    g = {"a": np.array([6.0, 0.0]), "b": np.array([[0.0, 8.0]])}
    out = clip_global_norm(g, 5.0)
    np.testing.assert_allclose(out["a"], [3.0, 0.0])
    np.testing.assert_allclose(out["b"], [[0.0, 4.0]])
    assert global_norm(out) <= 5.0 + 1e-12


def test_clip_zero_and_idempotent(rng):
    np.testing.assert_array_equal(clip_global_norm({"a": np.zeros(3)}, 1.0)["a"], np.zeros(3))
    g = {"a": rng.normal(10) * 10}
    once = clip_global_norm(g, 1.0)
    twice = clip_global_norm(once, 1.0)
    np.testing.assert_array_equal(once["a"], twice["a"])


def test_clip_rejects_non_positive():
    with pytest.raises(ContractError):
        clip_global_norm({"a": np.ones(1)}, 0.0)


def test_adam_zero_gradient_leaves_params():
    s = ParamStore()
    s.add("w", np.array([1.0, -2.0]))
    adam_step(s, {"w": np.zeros(2)}, lr=0.1)
    np.testing.assert_array_equal(s["w"], [1.0, -2.0])


@pytest.mark.parametrize("g", [0.3, -7.0])
def test_adam_first_step_is_sign_times_lr(g):
    s = ParamStore()
    s.add("w", np.array(0.0))
    adam_step(s, {"w": np.array(g)}, lr=0.01, eps=0.0)
    assert s["w"] == pytest.approx(-0.01 * np.sign(g), rel=1e-12)


def test_adam_step_counter_and_moment_shapes(rng):
    s = ParamStore()
    s.add("w", rng.normal((2, 3)))
    for i in range(3):
        adam_step(s, {"w": rng.normal((2, 3))}, lr=1e-3)
        assert s.step == i + 1
    assert s.m["w"].shape == s.v["w"].shape == (2, 3)


def test_adam_weight_decay_is_l2_gradient():
    s1, s2 = ParamStore(), ParamStore()
    s1.add("w", np.array([2.0]))
    s2.add("w", np.array([2.0]))
    adam_step(s1, {"w": np.array([0.5])}, lr=0.1, weight_decay=0.1)
    adam_step(s2, {"w": np.array([0.5 + 0.1 * 2.0])}, lr=0.1)
    np.testing.assert_array_equal(s1["w"], s2["w"])


def test_adam_unknown_gradient_name():
    s = ParamStore()
    with pytest.raises(KeyError):
        adam_step(s, {"nope": np.ones(1)}, lr=0.1)


def test_adam_deterministic(rng):
    g = {"w": rng.normal(4)}
    a, b = ParamStore(), ParamStore()
    a.add("w", np.ones(4))
    b.add("w", np.ones(4))
    for _ in range(5):
        adam_step(a, g, lr=0.01, weight_decay=1e-4)
        adam_step(b, g, lr=0.01, weight_decay=1e-4)
    np.testing.assert_array_equal(a["w"], b["w"])


def test_rng_determinism_and_children():
    a, b = SeededRng(5), SeededRng(5)
    np.testing.assert_array_equal(sample_noise("gumbel", (3, 2), a), sample_noise("gumbel", (3, 2), b))
    x = SeededRng(5).child("x").normal(4)
    SeededRng(5).child("y").normal(100)
    np.testing.assert_array_equal(x, SeededRng(5).child("x").normal(4))
    assert not np.array_equal(x, SeededRng(5).child("y").normal(4))


def test_normal_mean_clt_bound():
    x = sample_noise("standard-normal", 10**5, SeededRng(0))
    assert abs(x.mean()) < 4 / np.sqrt(1e5)


def test_gumbel_mean_is_euler_gamma():
    x = sample_noise("gumbel", 10**5, SeededRng(0))
    assert abs(x.mean() - EULER_GAMMA) < 0.02


def test_gumbel_is_finite_for_clamped_uniforms():
    assert np.all(np.isfinite(sample_noise("gumbel", 10**5, SeededRng(3))))


def test_unknown_noise_kind():
    with pytest.raises(ValueError):
        sample_noise("cauchy", 3, SeededRng(0))
