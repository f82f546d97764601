"""Counter-based seeded randomness.

Streams are Philox generators keyed by a seed plus an optional tuple of
integer stream ids, e.g. ``Rng(seed).split(image_index, timestep)``. Two
``Rng`` objects built from the same seed and ids produce the same stream.
"""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE


class Rng:
    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence([self.seed, *self.stream])
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, *ids: int) -> "Rng":
        """Independent child stream; does not advance this generator."""
        return Rng(self.seed, self.stream + tuple(ids))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


def randn(rng: Rng, shape) -> np.ndarray:
    """I.i.d. standard normal samples, float32."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    return rng.generator.standard_normal(shape, dtype=DTYPE)
