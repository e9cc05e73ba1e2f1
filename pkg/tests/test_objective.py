import math

import mpmath
import numpy as np
import pytest
from scipy import integrate, special, stats

from osbmlink import autodiff as ad
from osbmlink.autodiff import ContractError, DimensionError, Tensor
from osbmlink.objective import (ObjectiveConfig, anneal_weight, decode, edge_probability, elbo_loss,
                                feature_reconstruction_loss, init_decoder, kl_binary_concrete,
                                kl_gaussian_std, kl_kumaraswamy_beta, reconstruction_loss)
from osbmlink.rng import SeededRng, sample_noise
from osbmlink.variational import LatentNoise, PriorConfig, draw_latents, init_variational


def dec_params(w1, b1, w2, b2):
    return ad.leaves({"dec.w1": np.array(w1, float), "dec.b1": np.array(b1, float),
                      "dec.w2": np.array(w2, float), "dec.b2": np.array(b2, float)})


def test_decode_examples():
    p = dec_params(np.zeros((4, 2)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
    np.testing.assert_array_equal(decode(np.ones((3, 2)), p).data, 0.0)
    p = dec_params([[1.0]], [0.0], [[2.0]], [1.0])
    np.testing.assert_array_equal(decode(np.array([[3.0], [-3.0]]), p).data, [[7.0], [1.0]])
    assert decode(np.ones((3, 5)), ad.leaves(init_decoder(5, SeededRng(0)))).shape == (3, 5)
    with pytest.raises(DimensionError):
        decode(np.ones((3, 4)), ad.leaves(init_decoder(5, SeededRng(0))))


def test_decoder_default_widths():
    p = init_decoder(4, SeededRng(0))
    assert p["dec.w1"].shape == (8, 4) and p["dec.w2"].shape == (4, 8)


def test_edge_probability():
    assert edge_probability([1, 0], [0, 1]) == 0.5
    assert edge_probability([1, 0, 0], [1, 0, 0]) == pytest.approx(special.expit(1.0))
    a, b = np.random.default_rng(0).normal(size=(2, 7))
    assert edge_probability(a, b) == edge_probability(b, a)


def test_reconstruction_loss_cases(caplog):
    assert reconstruction_loss(np.array([0.0]), [1]).item() == pytest.approx(math.log(2))
    assert reconstruction_loss(np.array([50.0, -50.0]), [1, 0]).item() < 1e-20
    s = np.array([1.3, -0.2, 2.0])
    y = np.array([1, 0, 1])
    assert reconstruction_loss(s, 1 - y).item() > reconstruction_loss(s, y).item()
    assert reconstruction_loss(np.zeros(0), []).item() == 0.0 and "empty" in caplog.text


def test_reconstruction_loss_stable_at_extremes():
    s = np.array([-1e4, 1e4, -1e4, 1e4])
    out = reconstruction_loss(s, [1, 0, 0, 1])
    assert np.isfinite(out.item()) and out.item() == pytest.approx(1e4 / 2)
    p = ad.leaves({"s": s})
    assert np.all(np.isfinite(ad.backward(reconstruction_loss(p["s"], [1, 0, 0, 1]), p)["s"]))


def test_kl_gaussian_hand_cases():
    assert kl_gaussian_std(np.zeros((2, 3)), np.ones((2, 3))).item() == 0.0
    assert kl_gaussian_std(np.array([1.0]), np.array([1.0])).item() == pytest.approx(0.5)
    assert kl_gaussian_std(np.array([0.0]), np.array([2.0])).item() == pytest.approx(
        (4 - 1 - 2 * math.log(2)) / 2, rel=1e-14)
    assert (4 - 1 - 2 * math.log(2)) / 2 == pytest.approx(0.8069, abs=1e-4)


def test_kl_gaussian_closed_form_matches_quadrature():
    mu, sigma = 0.7, 1.8
    q = stats.norm(mu, sigma)
    val = integrate.quad(lambda x: q.pdf(x) * (q.logpdf(x) - stats.norm.logpdf(x)), -30, 30)[0]
    assert kl_gaussian_std(np.array([mu]), np.array([sigma])).item() == pytest.approx(val, rel=1e-8)


def kl_quadrature(c, d, a, b):
    """KL(Kumaraswamy(c, d) || Beta(a, b)) by tanh-sinh quadrature in u = v^c."""
    mp = mpmath.mp
    mp.dps = 30
    c, d, a, b = map(mpmath.mpf, (c, d, a, b))
    log_b = mpmath.log(mpmath.beta(a, b))

    def integrand(u):
        # v = u^(1/c); q(v) dv = d (1 - u)^(d-1) du
        log_v = mpmath.log(u) / c
        log_q = mpmath.log(c * d) + (c - 1) * log_v + (d - 1) * mpmath.log1p(-u)
        log_p = (a - 1) * log_v + (b - 1) * mpmath.log(-mpmath.expm1(log_v)) - log_b
        return d * (1 - u) ** (d - 1) * (log_q - log_p)

    return float(mpmath.quad(integrand, [0, 0.5, 1]))


def test_kl_kumaraswamy_beta_examples():
    assert kl_kumaraswamy_beta(np.array([1.0]), np.array([1.0]), 1.0, 1.0).item() == pytest.approx(0, abs=1e-12)
    got = kl_kumaraswamy_beta(np.array([2.0]), np.array([2.0]), 1.0, 1.0).item()
    assert abs(got - kl_quadrature(2.0, 2.0, 1.0, 1.0)) < 1e-3


def test_kl_kumaraswamy_beta_sums_over_sticks():
    c, d = np.array([2.0, 0.5]), np.array([3.0, 1.5])
    total = kl_kumaraswamy_beta(c, d, 2.0, 0.5).item()
    parts = sum(kl_kumaraswamy_beta(c[i:i + 1], d[i:i + 1], 2.0, 0.5).item() for i in range(2))
    assert total == pytest.approx(parts, rel=1e-13)


def test_kl_kumaraswamy_beta_random_sweep_vs_quadrature():
    r = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        c, d, a, b = np.exp(r.uniform(np.log(0.3), np.log(10.0), size=4))
        got = kl_kumaraswamy_beta(np.array([c]), np.array([d]), a, b).item()
        assert got >= -1e-6
        worst = max(worst, abs(got - kl_quadrature(c, d, a, b)))
    assert worst < 1e-3, worst


def test_kl_kumaraswamy_beta_contracts():
    with pytest.raises(ContractError):
        kl_kumaraswamy_beta(np.array([0.0]), np.array([1.0]), 1.0, 1.0)
    with pytest.raises(ContractError):
        kl_kumaraswamy_beta(np.array([1.0]), np.array([1.0]), 1.0, 1.0, taylor_terms=0)


def concrete_kl_draws(lam_post, lam_prior, tau_post, tau_prior, n=10**4, seed=0):
    noise = sample_noise("logistic", n, SeededRng(seed))
    x = (lam_post + noise) / tau_post
    out = [kl_binary_concrete(np.array([lam_post]), np.array([lam_prior]), tau_post, tau_prior,
                              b_logit=np.array([xi])).item() for xi in x]
    return np.array(out)


def test_concrete_kl_zero_at_equal_distributions():
    lam = math.log(0.3 / 0.7)
    d = concrete_kl_draws(lam, lam, 0.5, 0.5)
    assert abs(d.mean()) < 0.05
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_concrete_kl_positive_when_distributions_differ():
    d = concrete_kl_draws(5.0, math.log(0.01 / 0.99), 1.0, 1.0)
    assert d.mean() > 1 and d.min() < d.mean()


def test_concrete_kl_clamps_boundary_memberships():
    out = kl_binary_concrete(np.zeros(2), np.zeros(2), 1.0, 0.5, b=np.array([0.0, 1.0]))
    assert np.isfinite(out.item())
    with pytest.raises(ContractError):
        kl_binary_concrete(np.zeros(1), np.zeros(1), 0.0, 0.5, b=np.array([0.5]))


def test_concrete_logit_path_matches_clamped_path_inside():
    lam, prior, b = np.array([0.4, -1.0]), np.array([-2.0, 0.3]), np.array([0.3, 0.8])
    via_b = kl_binary_concrete(lam, prior, 1.0, 0.5, b=b).item()
    via_logit = kl_binary_concrete(lam, prior, 1.0, 0.5, b_logit=special.logit(b)).item()
    assert via_b == pytest.approx(via_logit, rel=1e-12)


def test_feature_reconstruction():
    params = ad.leaves({"feat.w": np.zeros((3, 2)), "feat.b": np.zeros(3)})
    x = np.random.default_rng(0).normal(size=(4, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    assert feature_reconstruction_loss(np.ones((4, 2)), x, params).item() == pytest.approx(0.5)
    perfect = ad.leaves({"feat.w": np.zeros((3, 2)), "feat.b": x[0]})
    assert feature_reconstruction_loss(np.ones((1, 2)), x[:1], perfect).item() == 0.0
    assert feature_reconstruction_loss(np.ones((4, 2)), None, params).item() == 0.0
    with pytest.raises(DimensionError):
        feature_reconstruction_loss(np.ones((4, 2)), np.ones((4, 5)), params)


def test_anneal_weight():
    assert anneal_weight(0, 60) == 0.0
    assert anneal_weight(60, 60) == 1.0 and anneal_weight(200, 60) == 1.0
    assert anneal_weight(30, 60) == 0.5
    with pytest.raises(ContractError):
        anneal_weight(1, 0)


def elbo_setup(seed=0, n=8, k=3, width=6):
    r = np.random.default_rng(seed)
    prior = PriorConfig()
    params = init_variational(width, k, prior, SeededRng(seed))
    params.update(init_decoder(k, SeededRng(seed + 1)))
    for key in ("heads.w_pi", "heads.w_mu", "heads.w_sigma"):
        params[key] = r.normal(size=params[key].shape) / np.sqrt(width)
    params["sticks.log_c"] = 0.1 * r.normal(size=k)
    params["sticks.log_d"] = 0.1 * r.normal(size=k)
    h = r.normal(size=(n, width))
    pairs = np.array([[0, 1], [1, 2], [2, 3], [4, 5], [0, 7], [3, 6]])
    labels = np.array([1, 1, 1, 0, 0, 0])
    return params, prior, h, pairs, labels, LatentNoise.draw(n, k, SeededRng(seed + 2))


def run_elbo(params, prior, h, pairs, labels, noise, epoch, **cfg):
    p = ad.leaves(params)
    s = draw_latents(Tensor(h), p, prior, noise, use_stick_prior=cfg.get("use_stick_prior", True))
    return elbo_loss(s, p, pairs, labels, None, ObjectiveConfig(prior=prior, anneal_end=10, **cfg), epoch)


def test_elbo_annealing_gate_and_identity():
    args = elbo_setup()
    out0 = run_elbo(*args, epoch=0)
    assert out0.total == out0.recon + out0.feat_recon
    out = run_elbo(*args, epoch=5, kl_scale=0.1)
    assert out.anneal_weight == 0.5
    assert out.total == out.recon + out.feat_recon + out.anneal_weight * (
        out.kl_sticks + out.kl_memberships + out.kl_strengths)


def test_elbo_ablation_terms_exactly_zero():
    args = elbo_setup()
    out = run_elbo(*args, epoch=20, use_stick_prior=False, kl_memberships=False, kl_strengths=False)
    assert out.kl_sticks == out.kl_memberships == out.kl_strengths == 0.0
    assert out.total == out.recon


def test_elbo_kl_zero_when_posterior_equals_prior():
    params, prior, h, pairs, labels, noise = elbo_setup()
    params["heads.w_pi"][:] = 0.0
    params["heads.w_mu"][:] = 0.0
    params["heads.w_sigma"][:] = 0.0
    params["sticks.log_c"][:] = 0.0
    params["sticks.log_d"][:] = 0.0
    same = PriorConfig(a=1.0, b=1.0, tau=0.5, tau_prior=0.5)
    out = run_elbo(params, same, h, pairs, labels, noise, epoch=20)
    assert out.kl_sticks == pytest.approx(0.0, abs=1e-12)
    assert out.kl_strengths == 0.0
    assert out.kl_memberships == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_elbo_gradient_check_with_frozen_noise(seed):
    params, prior, h, pairs, labels, noise = elbo_setup(seed)
    params["h"] = h
    # per-pair KL scale as in training (1 / number of node pairs); keeps |loss| ~ 1 so
    # central-difference roundoff stays below the tolerance
    cfg = ObjectiveConfig(prior=prior, anneal_end=10, kl_scale=1 / 28)

    def loss(p):
        s = draw_latents(p["h"], p, prior, noise)
        return elbo_loss(s, p, pairs, labels, None, cfg, 5).total_tensor

    assert ad.finite_difference_check(loss, params) < 1e-5
