"""Edge decoder, likelihood terms, KL terms and the assembled negative ELBO."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import special

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .rng import EULER_GAMMA, SeededRng
from .variational import LatentSample, PriorConfig

log = logging.getLogger(__name__)

CONCRETE_EPS = 1e-6
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def init_decoder(k: int, rng: SeededRng, d_hidden: int | None = None, d_mlp: int | None = None,
                 feature_dim: int = 0) -> dict[str, np.ndarray]:
    d_hidden = 2 * k if d_hidden is None else d_hidden
    d_mlp = k if d_mlp is None else d_mlp
    p = {
        "dec.w1": rng.normal((d_hidden, k)) / np.sqrt(k),
        "dec.b1": np.zeros(d_hidden),
        "dec.w2": rng.normal((d_mlp, d_hidden)) / np.sqrt(d_hidden),
        "dec.b2": np.zeros(d_mlp),
    }
    if feature_dim > 0:
        p["feat.w"] = rng.normal((feature_dim, d_mlp)) / np.sqrt(d_mlp)
        p["feat.b"] = np.zeros(feature_dim)
    return p


def decode(z, params: Mapping[str, Tensor]) -> Tensor:
    """z~ = W2 ReLU(W1 z + b1) + b2, row-wise."""
    z = ad.as_tensor(z)
    w1, w2 = params["dec.w1"], params["dec.w2"]
    if z.ndim != 2 or z.shape[1] != w1.shape[1] or w2.shape[1] != w1.shape[0]:
        raise DimensionError(f"decoder cannot map z of shape {z.shape} through "
                             f"{w1.shape} and {w2.shape}")
    hidden = ad.relu(ad.linear(z, w1, params["dec.b1"]))
    return ad.linear(hidden, w2, params["dec.b2"])


def pair_logits(zt: Tensor, pairs: np.ndarray) -> Tensor:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return ad.sum(ad.take_rows(zt, pairs[:, 0]) * ad.take_rows(zt, pairs[:, 1]), axis=1)


def edge_probability(zt_n, zt_m) -> float:
    zt_n, zt_m = np.asarray(zt_n, dtype=np.float64), np.asarray(zt_m, dtype=np.float64)
    if zt_n.shape != zt_m.shape:
        raise DimensionError("decoded vectors differ in width")
    return float(special.expit(np.dot(zt_n, zt_m)))


def reconstruction_loss(logits, labels) -> Tensor:
    """Mean Bernoulli NLL in logit form: softplus(s) - y * s."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape[0] == 0:
        log.warning("empty pair batch; reconstruction loss is 0")
        return ad.Tensor(0.0)
    return ad.mean(ad.softplus(logits) - logits * labels)


def kl_gaussian_std(mu, sigma=None, log_sigma=None) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over entries."""
    mu = ad.as_tensor(mu)
    if log_sigma is None:
        log_sigma = ad.log(ad.as_tensor(sigma))
    log_sigma = ad.as_tensor(log_sigma)
    var = ad.exp(2.0 * log_sigma)
    return 0.5 * ad.sum(ad.square(mu) + var - 1.0 - 2.0 * log_sigma)


def _beta_tail_term(x, c, d):
    # B(x/c, d) / (x + c d)
    return ad.exp(ad.betaln(x / c, d)) / (x + c * d)


def kl_kumaraswamy_beta(c, d, a: float, b: float, taylor_terms: int = 10,
                        tail: bool = True) -> Tensor:
    """KL(Kumaraswamy(c, d) || Beta(a, b)), summed over sticks.

    The expectation of log(1 - v) is the series sum_m B(m/c, d) / (m + c d).
    The first ``taylor_terms`` terms are summed exactly; with ``tail`` the
    remainder is added as a midpoint-rule integral (Gauss-Legendre after the
    substitution x = X s^(-1/d)) plus the first Euler-Maclaurin correction.
    """
    c, d = ad.as_tensor(c), ad.as_tensor(d)
    if not (np.all(np.isfinite(c.data)) and np.all(np.isfinite(d.data))):
        raise FloatingPointError("non-finite Kumaraswamy parameters")
    if np.any(c.data <= 0) or np.any(d.data <= 0) or a <= 0 or b <= 0:
        raise ContractError("Kumaraswamy and Beta parameters must be positive")
    if taylor_terms < 1:
        raise ContractError("taylor_terms must be >= 1")
    c2 = ad.reshape(c, c.shape + (1,))
    d2 = ad.reshape(d, d.shape + (1,))
    m = np.arange(1, taylor_terms + 1, dtype=np.float64)
    series = ad.sum(_beta_tail_term(m, c2, d2), axis=-1)
    if tail:
        X = taylor_terms + 0.5
        log_s = np.log(_GL_NODES)
        x = X * ad.exp(-(log_s / d2))
        log_f = (ad.betaln(x / c2, d2) - ad.log(x + c2 * d2) + np.log(X)
                 - (1.0 / d2 + 1.0) * log_s - ad.log(d2))
        integral = ad.sum(ad.exp(log_f) * _GL_WEIGHTS, axis=-1)
        fX = _beta_tail_term(X, c, d)
        dfX = fX * ((ad.digamma(X / c) - ad.digamma(X / c + d)) / c - 1.0 / (X + c * d))
        series = series + integral + dfX / 24.0
    kl = ((c - a) / c * (-EULER_GAMMA - ad.digamma(d) - 1.0 / d)
          + ad.log(c * d) + float(special.betaln(a, b)) - (d - 1.0) / d
          + (b - 1.0) * d * series)
    return ad.sum(kl)


def concrete_logit_log_density(x, lam, tau: float):
    """Log density of the logit of a Binary-Concrete(lam, tau) draw."""
    return np.log(tau) + lam - tau * x - 2.0 * ad.softplus(lam - tau * x)


def kl_binary_concrete(lam_post, prior_logit, tau_post: float, tau_prior: float, b=None,
                       b_logit=None) -> Tensor:
    """Single-sample estimate of KL(q(B) || p(B | v)) at the drawn relaxed memberships.

    Pass the draw's logit when it is known; a bare ``b`` is clamped into
    (1e-6, 1 - 1e-6) before its logit is taken.
    """
    if tau_post <= 0 or tau_prior <= 0:
        raise ContractError("temperatures must be positive")
    if b_logit is not None:
        x = ad.as_tensor(b_logit)
    elif b is not None:
        b = ad.clip(ad.as_tensor(b), CONCRETE_EPS, 1.0 - CONCRETE_EPS)
        x = ad.log(b) - ad.log(1.0 - b)
    else:
        raise ContractError("need the relaxed memberships or their logits")
    log_q = concrete_logit_log_density(x, lam_post, tau_post)
    log_p = concrete_logit_log_density(x, prior_logit, tau_prior)
    return ad.sum(log_q - log_p)


def feature_reconstruction_loss(zt, features, params: Mapping[str, Tensor]) -> Tensor:
    """0.5 * mean over nodes of ||W z~ + b - x||^2; zero without features."""
    if features is None or "feat.w" not in params:
        return ad.Tensor(0.0)
    features = np.asarray(features, dtype=np.float64)
    if params["feat.w"].shape[0] != features.shape[1]:
        raise DimensionError(f"feature decoder width {params['feat.w'].shape[0]} "
                             f"!= feature width {features.shape[1]}")
    recon = ad.linear(zt, params["feat.w"], params["feat.b"])
    return 0.5 * ad.mean(ad.sum(ad.square(recon - features), axis=1))


def anneal_weight(epoch: float, anneal_end: float) -> float:
    if not anneal_end > 0:
        raise ContractError("anneal_end must be positive")
    return float(min(1.0, max(0.0, epoch / anneal_end)))


@dataclass(frozen=True)
class ObjectiveConfig:
    prior: PriorConfig = PriorConfig()
    anneal_end: float = 60.0
    taylor_terms: int = 10
    use_stick_prior: bool = True
    kl_memberships: bool = True
    kl_strengths: bool = True
    # multiplies every KL term; 1 / (number of node pairs) puts the KL on the
    # same per-pair footing as the batch-mean reconstruction term
    kl_scale: float = 1.0


@dataclass
class LossBreakdown:
    recon: float
    kl_sticks: float
    kl_memberships: float
    kl_strengths: float
    feat_recon: float
    anneal_weight: float
    total: float
    total_tensor: Tensor | None = None
    kl_scale: float = 1.0

    def row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in
                ("total", "recon", "kl_sticks", "kl_memberships", "kl_strengths",
                 "feat_recon", "anneal_weight")}


def elbo_loss(sample: LatentSample, params: Mapping[str, Tensor], pairs, labels,
              features, config: ObjectiveConfig, epoch: float) -> LossBreakdown:
    zt = decode(sample.z, params)
    recon = reconstruction_loss(pair_logits(zt, pairs), labels)
    feat = feature_reconstruction_loss(zt, features, params)
    zero = ad.Tensor(0.0)
    prior = config.prior
    if config.use_stick_prior:
        kl_v = kl_kumaraswamy_beta(ad.exp(params["sticks.log_c"]), ad.exp(params["sticks.log_d"]),
                                   prior.a, prior.b, config.taylor_terms)
    else:
        kl_v = zero
    kl_b = (kl_binary_concrete(sample.lam, sample.prior_logit, prior.tau, prior.tau_prior,
                               sample.b, sample.b_logit) if config.kl_memberships else zero)
    kl_r = kl_gaussian_std(sample.mu, log_sigma=sample.log_sigma) if config.kl_strengths else zero
    w = anneal_weight(epoch, config.anneal_end)
    # KL terms are reported already scaled so total = recon + feat + w * (sum of KLs) exactly
    kl_v, kl_b, kl_r = (kl * config.kl_scale for kl in (kl_v, kl_b, kl_r))
    total = recon + feat + w * (kl_v + kl_b + kl_r)
    return LossBreakdown(recon.item(), kl_v.item(), kl_b.item(), kl_r.item(), feat.item(), w,
                         total.item(), total, config.kl_scale)
