"""Parameter storage, global-norm clipping and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import DTYPE, ContractError


@dataclass
class ParamStore:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        value = np.array(value, dtype=DTYPE)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def num_values(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.m.items()},
                          {k: v.copy() for k, v in self.v.items()},
                          self.step)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if not max_norm > 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              weight_decay: float = 0.0) -> ParamStore:
    """One bias-corrected Adam update in place; weight decay is an L2 term on the gradient."""
    if not lr > 0:
        raise ContractError(f"lr must be positive, got {lr}")
    b1, b2 = betas
    if not (0 <= b1 < 1 and 0 <= b2 < 1):
        raise ContractError(f"betas must lie in [0, 1), got {betas}")
    for name in grads:
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
    store.step += 1
    t = store.step
    for name, g in grads.items():
        p = store.params[name]
        if weight_decay:
            g = g + weight_decay * p
        store.m[name] = b1 * store.m[name] + (1 - b1) * g
        store.v[name] = b2 * store.v[name] + (1 - b2) * g * g
        m_hat = store.m[name] / (1 - b1 ** t)
        v_hat = store.v[name] / (1 - b2 ** t)
        store.params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return store
