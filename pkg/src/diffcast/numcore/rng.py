"""Deterministic, splittable random streams.

A stream is addressed by (seed, path): the path is a tuple of child indices
fed to the generator as a spawn key, so any stream can be reconstructed from
scratch and children are pairwise independent by counter disjointness.
Philox is counter-based, which keeps sequences identical across platforms.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class RngStream:
    __slots__ = ("seed", "path", "_gen")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *indices: int) -> "RngStream":
        """A fresh independent stream addressed by this path plus indices."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers in the half-open range [low, high)."""
        return self._gen.integers(low, high, size=size)

    def uniform(self, shape, low: float, high: float) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"


def gaussian_draw(rng: RngStream, shape=()) -> Tensor:
    """Standard-normal tensor (a graph constant; gradients never flow into
    noise draws)."""
    return Tensor(rng.normal(shape))
