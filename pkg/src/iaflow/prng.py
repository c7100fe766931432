"""Seeded random streams.

Backed by NumPy's PCG64 bit generator; independent sub-streams come from
``SeedSequence.spawn`` so that, e.g., data shuffling and reparameterization
noise never share state.
"""

from __future__ import annotations

import numpy as np


class Prng:
    """Deterministic random stream: identical seed gives an identical sequence."""

    algorithm = "numpy-pcg64"

    def __init__(self, seed: int | np.random.SeedSequence):
        self._seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, n: int) -> list[Prng]:
        return [Prng(s) for s in self._seq.spawn(n)]

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)


def streams(seed: int) -> dict[str, Prng]:
    """Named independent streams used by one run."""
    names = ("data", "init", "noise", "eval")
    return dict(zip(names, Prng(seed).spawn(len(names))))
