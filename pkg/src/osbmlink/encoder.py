"""Edge-type-aware sparse multi-head attention encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .expander import EDGE_TYPES, AttentionTopology
from .rng import SeededRng

INIT_STD = 0.02


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 3
    heads: int = 4
    head_dim: int = 32
    feature_dim: int = 0
    dropout: float = 0.1
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 0.3:
            raise ConfigError(f"dropout must lie in [0, 0.3], got {self.dropout}")
        if self.layers < 0 or self.heads < 1 or self.head_dim < 1:
            raise ConfigError("layers >= 0, heads >= 1 and head_dim >= 1 required")

    @property
    def width(self) -> int:
        return self.heads * self.head_dim


def init_encoder(config: EncoderConfig, num_nodes: int, rng: SeededRng):
    """Fresh encoder parameters and batch-norm buffers as name -> array dicts."""
    D, H, dh = config.width, config.heads, config.head_dim
    p: dict[str, np.ndarray] = {}
    if config.feature_dim > 0:
        p["enc.in.w"] = INIT_STD * rng.normal((D, config.feature_dim))
        p["enc.in.b"] = np.zeros(D)
    else:
        p["enc.embed"] = INIT_STD * rng.normal((num_nodes, D))
    buffers: dict[str, np.ndarray] = {}
    for i in range(config.layers):
        pre = f"enc.l{i}."
        for name in ("wq", "wk", "wv"):
            p[pre + name] = INIT_STD * rng.normal((D, D))
        p[pre + "etype"] = INIT_STD * rng.normal((len(EDGE_TYPES), H, dh))
        p[pre + "ffn1.w"] = INIT_STD * rng.normal((4 * D, D))
        p[pre + "ffn1.b"] = np.zeros(4 * D)
        # no bias on the second FFN layer: batch norm right after it cancels any shift
        p[pre + "ffn2.w"] = INIT_STD * rng.normal((D, 4 * D))
        for bn in ("bn1", "bn2"):
            p[pre + bn + ".scale"] = np.ones(D)
            p[pre + bn + ".shift"] = np.zeros(D)
            buffers[pre + bn + ".mean"] = np.zeros(D)
            buffers[pre + bn + ".var"] = np.ones(D)
    return p, buffers


def attention_scores(x: Tensor, params: Mapping[str, Tensor], prefix: str,
                     topology: AttentionTopology, heads: int, head_dim: int):
    """Per-edge, per-head scores plus the gathered per-node values.

    Returns ``(scores, q, k, v)`` with scores shaped (E, H) and q/k/v shaped (N, H, d_h).
    """
    N = x.shape[0]
    etype = params[prefix + "etype"]
    if topology.num_edges and int(topology.etype.max()) >= etype.shape[0]:
        raise ConfigError(f"no edge-type embedding for type {int(topology.etype.max())}")
    q = ad.reshape(ad.linear(x, params[prefix + "wq"]), (N, heads, head_dim))
    k = ad.reshape(ad.linear(x, params[prefix + "wk"]), (N, heads, head_dim))
    v = ad.reshape(ad.linear(x, params[prefix + "wv"]), (N, heads, head_dim))
    q_dst = ad.take_rows(q, topology.dst)
    k_src = ad.take_rows(k, topology.src)
    e_type = ad.take_rows(etype, topology.etype)
    content = ad.sum(q_dst * k_src, axis=-1) / np.sqrt(head_dim)
    bias = ad.sum(q_dst * e_type, axis=-1)
    return content + bias, q, k, v


def attention_aggregate(scores, values: Tensor, topology: AttentionTopology):
    """Softmax over in-edges of each destination, then a weighted sum of source values.

    ``values`` is (N, H, d_h); the result is (N, H * d_h).
    """
    N, H, dh = values.shape
    if topology.num_edges and np.any(topology.in_degree() == 0):
        raise ContractError("a destination node has no incoming attention edge")
    scores = ad.as_tensor(scores)
    alpha = ad.segment_softmax(scores, topology.dst, N)
    weighted = ad.reshape(alpha, alpha.shape + (1,)) * ad.take_rows(values, topology.src)
    msg = ad.segment_sum(weighted, topology.dst, N)
    return ad.reshape(msg, (N, H * dh))


def batch_norm(x: Tensor, params, buffers, name: str, train: bool,
               eps: float, momentum: float, update_stats: bool) -> Tensor:
    scale, shift = params[name + ".scale"], params[name + ".shift"]
    if train:
        mu = ad.mean(x, axis=0, keepdims=True)
        centered = x - mu
        var = ad.mean(ad.square(centered), axis=0, keepdims=True)
        if update_stats and buffers is not None:
            n = x.shape[0]
            unbiased = var.data[0] * (n / (n - 1) if n > 1 else 1.0)
            buffers[name + ".mean"] = (1 - momentum) * buffers[name + ".mean"] + momentum * mu.data[0]
            buffers[name + ".var"] = (1 - momentum) * buffers[name + ".var"] + momentum * unbiased
        xhat = centered / ad.sqrt(var + eps)
    else:
        xhat = (x - buffers[name + ".mean"]) / np.sqrt(buffers[name + ".var"] + eps)
    return xhat * scale + shift


def _dropout(x: Tensor, rate: float, rng: SeededRng | None) -> Tensor:
    if rng is None or rate <= 0:
        return x
    keep = (rng.uniform(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def encoder_forward(params: Mapping[str, Tensor], features, topology: AttentionTopology,
                    config: EncoderConfig, mode: str = "eval", buffers=None,
                    rng: SeededRng | None = None, update_stats: bool = True) -> Tensor:
    """Node representations H (N x D).

    In ``train`` mode batch norm uses batch statistics (and refreshes the
    running buffers) and dropout draws masks from ``rng``; ``eval`` is a pure
    function of its inputs.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    drop_rng = rng if train else None
    if config.feature_dim > 0:
        if features is None:
            raise ContractError("encoder configured for features but none given")
        x = ad.linear(ad.as_tensor(features), params["enc.in.w"], params["enc.in.b"])
    else:
        x = params["enc.embed"]
    if x.shape[0] != topology.num_nodes:
        raise ContractError(f"{x.shape[0]} node inputs for a {topology.num_nodes}-node topology")
    for i in range(config.layers):
        pre = f"enc.l{i}."
        scores, _, _, v = attention_scores(x, params, pre, topology, config.heads, config.head_dim)
        att = _dropout(attention_aggregate(scores, v, topology), config.dropout, drop_rng)
        x = batch_norm(x + att, params, buffers, pre + "bn1", train,
                       config.bn_eps, config.bn_momentum, update_stats)
        hidden = ad.gelu(ad.linear(x, params[pre + "ffn1.w"], params[pre + "ffn1.b"]))
        hidden = _dropout(hidden, config.dropout, drop_rng)
        ffn = ad.linear(hidden, params[pre + "ffn2.w"])
        x = batch_norm(x + ffn, params, buffers, pre + "bn2", train,
                       config.bn_eps, config.bn_momentum, update_stats)
    return x


def attention_weights(x: Tensor, params, prefix: str, topology: AttentionTopology,
                      heads: int, head_dim: int) -> np.ndarray:
    scores, *_ = attention_scores(ad.as_tensor(x), params, prefix, topology, heads, head_dim)
    return ad.segment_softmax(scores.data, topology.dst, topology.num_nodes)


def count_attention_ops(topology: AttentionTopology | int, heads: int, head_dim: int) -> int:
    edges = topology if isinstance(topology, int) else topology.num_edges
    return int(edges) * int(heads) * int(head_dim)
