"""Closed-form posterior-mean denoiser for an empirical distribution.

For data points ``x_i`` and ``z_t = sqrt(ab) x + sqrt(1 - ab) eps`` the
optimal noise estimate is ``(z_t - sqrt(ab) x_hat) / sqrt(1 - ab)`` with
``x_hat`` the softmax-weighted mean of the ``x_i`` under weights
``exp(-|z_t - sqrt(ab) x_i|^2 / (2 (1 - ab)))``. It needs no training, which
makes it a clean reference for the sampler.
"""

from __future__ import annotations

import math

import numpy as np

from ..attention import AttentionMode
from ..errors import ArgumentError, DimensionError
from ..numerics.tensor import DTYPE


class OracleDenoiser:
    def __init__(self, points, alpha_bar):
        pts = [np.asarray(p, dtype=np.float64) for p in points]
        if not pts:
            raise ArgumentError("oracle denoiser needs a nonempty dataset")
        self.points = np.stack(pts)
        self.alpha_bar = np.asarray(getattr(alpha_bar, "alpha_bar", alpha_bar), dtype=np.float64)

    @property
    def shape(self):
        return self.points.shape[1:]

    def weights(self, z_t, t: int) -> np.ndarray:
        ab = self.alpha_bar[t]
        z = np.asarray(z_t, dtype=np.float64)
        diff = z[None] - math.sqrt(ab) * self.points
        d2 = (diff * diff).reshape(len(self.points), -1).sum(axis=1)
        var = max(1.0 - ab, 1e-12)
        logits = -d2 / (2.0 * var)
        logits -= logits.max()
        w = np.exp(logits)
        return w / w.sum()

    def eps(self, z_t, t: int) -> np.ndarray:
        z = np.asarray(z_t, dtype=np.float64)
        if z.shape != self.shape:
            raise DimensionError(f"latent shape {z.shape} != dataset shape {self.shape}")
        ab = self.alpha_bar[t]
        if ab >= 1.0:
            return np.zeros_like(z)
        w = self.weights(z, t)
        x_hat = np.tensordot(w, self.points, axes=1)
        return (z - math.sqrt(ab) * x_hat) / math.sqrt(1.0 - ab)

    def predict(self, z_t, t, prompt=None, mode=AttentionMode.STANDARD):
        """Sampler-compatible wrapper; prompt and mode are ignored."""
        z = np.asarray(z_t)
        if z.ndim == len(self.shape) + 1:
            out = np.stack([self.eps(zi, t) for zi in z])
        else:
            out = self.eps(z, t)
        return out.astype(z.dtype if z.dtype != np.float64 else np.float64), []


def oracle_eps(oracle: OracleDenoiser, z_t, t: int) -> np.ndarray:
    return oracle.eps(z_t, t)
