"""Variational heads, stick-breaking prevalences and reparameterized latent draws."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import special

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .encoder import INIT_STD
from .rng import SeededRng, sample_noise

STICK_U_EPS = 1e-8
PI_EPS = 1e-7
MEMBERSHIP_EPS = 1e-15
LOG_SIGMA_RANGE = (-30.0, 10.0)


@dataclass(frozen=True)
class PriorConfig:
    a: float = 10.0
    b: float = 0.1
    tau_prior: float = 0.5
    tau: float = 1.0

    def __post_init__(self):
        if min(self.a, self.b, self.tau_prior, self.tau) <= 0:
            raise ContractError("prior parameters and temperatures must be positive")


def init_variational(width: int, k: int, prior: PriorConfig, rng: SeededRng) -> dict[str, np.ndarray]:
    return {
        "heads.w_pi": INIT_STD * rng.normal((k, width)),
        "heads.w_mu": INIT_STD * rng.normal((k, width)),
        "heads.w_sigma": INIT_STD * rng.normal((k, width)),
        # posterior sticks start at the prior
        "sticks.log_c": np.full(k, np.log(prior.a)),
        "sticks.log_d": np.full(k, np.log(prior.b)),
    }


def heads_forward(h, params: Mapping[str, Tensor]):
    """Membership logits, strength means and strength log-stds, each N x K."""
    h = ad.as_tensor(h)
    w_pi, w_mu, w_sigma = params["heads.w_pi"], params["heads.w_mu"], params["heads.w_sigma"]
    if not (w_pi.shape == w_mu.shape == w_sigma.shape):
        raise DimensionError("variational heads disagree on shape")
    if h.ndim != 2 or h.shape[1] != w_pi.shape[1]:
        raise DimensionError(f"H has shape {h.shape}, heads expect width {w_pi.shape[1]}")
    return ad.linear(h, w_pi), ad.linear(h, w_mu), ad.linear(h, w_sigma)


@dataclass
class Sticks:
    v: Tensor
    log_v: Tensor
    log_1mv: Tensor


def kumaraswamy_from_uniform(log_c, log_d, u) -> Sticks:
    """v = (1 - u^(1/d))^(1/c), kept in log space for saturated sticks."""
    c, d = ad.exp(log_c), ad.exp(log_d)
    u = np.clip(np.asarray(u, dtype=np.float64), STICK_U_EPS, 1.0 - STICK_U_EPS)
    a = ad.div(np.log(u), d)
    log_1mw = ad.log1mexp(a)
    log_v = ad.div(log_1mw, c)
    log_1mv = ad.log1mexp(log_v)
    return Sticks(ad.exp(log_v), log_v, log_1mv)


def sample_sticks(params, rng: SeededRng) -> np.ndarray:
    """One Kumaraswamy draw per community from ``{"sticks.log_c", "sticks.log_d"}`` or (c, d)."""
    if isinstance(params, tuple):
        log_c, log_d = np.log(params[0]), np.log(params[1])
    else:
        log_c = np.asarray(getattr(params["sticks.log_c"], "data", params["sticks.log_c"]))
        log_d = np.asarray(getattr(params["sticks.log_d"], "data", params["sticks.log_d"]))
    u = sample_noise("uniform01", np.shape(log_c), rng)
    return kumaraswamy_from_uniform(ad.Tensor(log_c), ad.Tensor(log_d), u).v.data


def kumaraswamy_mean(c, d):
    c, d = np.asarray(c, dtype=np.float64), np.asarray(d, dtype=np.float64)
    return np.exp(np.log(d) + special.betaln(1.0 + 1.0 / c, d))


def log_pi_from_sticks(log_v: Tensor, log_1mv: Tensor) -> Tensor:
    """log pi_k = log v_k + sum_{i<k} log(1 - v_i)."""
    k = log_v.shape[0]
    before = ad.cumsum(log_1mv, axis=0) - log_1mv
    return log_v + before if k else log_v


def sticks_to_pi(v) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    log_v, log_1mv = ad.Tensor(np.log(v)), ad.Tensor(np.log1p(-v))
    return np.exp(log_pi_from_sticks(log_v, log_1mv).data)


def prior_logit(log_pi) -> Tensor:
    """log(pi / (1 - pi)) with pi clamped into (1e-7, 1 - 1e-7)."""
    lp = ad.clip(ad.as_tensor(log_pi), np.log(PI_EPS), np.log1p(-PI_EPS))
    return lp - ad.log1mexp(lp)


def posterior_logits(ell, pi) -> Tensor:
    """ell + log-odds(pi), broadcast over nodes."""
    if isinstance(pi, Tensor):
        log_pi = ad.log(pi)
    else:
        log_pi = np.log(np.clip(np.asarray(pi, dtype=np.float64), PI_EPS, 1 - PI_EPS))
    return ad.as_tensor(ell) + prior_logit(log_pi)


def membership_logit(lam, tau: float, noise) -> Tensor:
    """Logit of the Binary-Concrete draw, (lam + logistic noise) / tau."""
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    lam = ad.as_tensor(lam)
    if isinstance(noise, SeededRng):
        noise = sample_noise("logistic", lam.shape, noise)
    return (lam + noise) / tau


def open_unit(b: Tensor) -> Tensor:
    """Keep relaxed memberships strictly inside (0, 1); float64 sigmoid saturates past |x| ~ 37."""
    return ad.clip(b, MEMBERSHIP_EPS, 1.0 - MEMBERSHIP_EPS)


def sample_membership(lam, tau: float, noise) -> Tensor:
    """Binary-Concrete relaxation with logistic noise; ``noise`` may be an rng."""
    return open_unit(ad.sigmoid(membership_logit(lam, tau, noise)))


def sample_strengths(mu, log_sigma, noise) -> Tensor:
    mu = ad.as_tensor(mu)
    if isinstance(noise, SeededRng):
        noise = sample_noise("standard-normal", mu.shape, noise)
    sigma = ad.exp(ad.clip(ad.as_tensor(log_sigma), *LOG_SIGMA_RANGE))
    return mu + sigma * noise


def compose_embedding(b, r) -> Tensor:
    b, r = ad.as_tensor(b), ad.as_tensor(r)
    if b.shape != r.shape:
        raise DimensionError(f"membership {b.shape} and strength {r.shape} shapes differ")
    return b * r


@dataclass
class LatentNoise:
    """Frozen noise for one latent draw."""

    u_sticks: np.ndarray
    logistic: np.ndarray
    normal: np.ndarray

    @classmethod
    def draw(cls, n: int, k: int, rng: SeededRng) -> "LatentNoise":
        return cls(sample_noise("uniform01", (k,), rng),
                   sample_noise("logistic", (n, k), rng),
                   sample_noise("standard-normal", (n, k), rng))


@dataclass
class LatentSample:
    v: Tensor | None
    log_pi: Tensor | None
    pi: np.ndarray | None
    ell: Tensor
    lam: Tensor
    prior_logit: Tensor
    b: Tensor
    r: Tensor
    mu: Tensor
    log_sigma: Tensor
    z: Tensor
    b_logit: Tensor | None = None


def draw_latents(h, params: Mapping[str, Tensor], prior: PriorConfig, noise: LatentNoise | None,
                 use_stick_prior: bool = True) -> LatentSample:
    """Reparameterized sample (``noise`` given) or expected-value readout (``noise=None``).

    The readout takes the Kumaraswamy mean for each stick, sigmoid(lambda)
    for memberships and mu for strengths.
    """
    ell, mu, log_sigma = heads_forward(h, params)
    k = ell.shape[1]
    if use_stick_prior:
        log_c, log_d = params["sticks.log_c"], params["sticks.log_d"]
        if noise is not None:
            st = kumaraswamy_from_uniform(log_c, log_d, noise.u_sticks)
            v, log_pi = st.v, log_pi_from_sticks(st.log_v, st.log_1mv)
        else:
            vm = np.clip(kumaraswamy_mean(np.exp(log_c.data), np.exp(log_d.data)), 1e-12, 1 - 1e-12)
            v = ad.Tensor(vm)
            log_pi = log_pi_from_sticks(ad.Tensor(np.log(vm)), ad.Tensor(np.log1p(-vm)))
        p_logit = prior_logit(log_pi)
    else:
        v, log_pi = None, None
        p_logit = ad.Tensor(np.zeros(k))
    lam = ell + p_logit
    b_logit = None
    if noise is not None:
        b_logit = membership_logit(lam, prior.tau, noise.logistic)
        b = open_unit(ad.sigmoid(b_logit))
        r = sample_strengths(mu, log_sigma, noise.normal)
    else:
        b = open_unit(ad.sigmoid(lam))
        r = mu
    z = compose_embedding(b, r)
    pi = None if log_pi is None else np.exp(log_pi.data)
    return LatentSample(v, log_pi, pi, ell, lam, p_logit, b, r, mu, log_sigma, z, b_logit)
