"""Seeded random streams and the noise kinds used by reparameterized sampling."""

from __future__ import annotations

import zlib

import numpy as np

EULER_GAMMA = 0.5772156649015329
_U_EPS = 1e-12


class SeededRng:
    """A reproducible stream; named children are independent of call order."""

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = path
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *path])))

    def child(self, name: str) -> "SeededRng":
        return SeededRng(self.seed, self.path + (zlib.crc32(name.encode()),))

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.gen.uniform(low, high, size=shape)

    def normal(self, shape=None) -> np.ndarray:
        return self.gen.standard_normal(size=shape)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self.gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)


def sample_noise(kind: str, shape, rng: SeededRng) -> np.ndarray:
    if kind == "uniform01":
        return rng.uniform(shape)
    if kind == "standard-normal":
        return rng.normal(shape)
    if kind == "gumbel":
        u = np.clip(rng.uniform(shape), _U_EPS, 1.0 - _U_EPS)
        return -np.log(-np.log(u))
    if kind == "logistic":
        u = np.clip(rng.uniform(shape), _U_EPS, 1.0 - _U_EPS)
        return np.log(u) - np.log1p(-u)
    raise ValueError(f"unknown noise kind {kind!r}")
