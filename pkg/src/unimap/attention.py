"""Text-conditioned cross-attention with switchable score maps.

``STANDARD`` uses ``softmax(Q K^T / sqrt(d))``. ``UNIFORM`` replaces the
score map with the constant ``1/N``, so every visual token receives the
token-mean of the values and neither Q nor K is ever computed. ``ZERO``
drops the update term altogether.

All functions accept a single sample (``x`` is ``M x d_x``, ``c_emb`` is
``N x d_c``) or a batch with a leading axis on both. Weights may be plain
arrays or :class:`~unimap.numerics.Var` so the same code serves training.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError
from .numerics import autodiff as ad
from .numerics.rng import Rng, randn
from .numerics.tensor import check_finite


class AttentionMode(enum.Enum):
    STANDARD = "standard"
    UNIFORM = "uniform"
    ZERO = "zero"

    @classmethod
    def parse(cls, name) -> "AttentionMode":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ArgumentError(f"unknown attention mode {name!r}") from None


@dataclass
class CrossAttentionLayer:
    w_q: object  # d_x x d
    w_k: object  # d_c x d
    w_v: object  # d_c x d
    w_o: object  # d x d_x
    heads: int = 1

    def __post_init__(self):
        dq = ad.value(self.w_q).shape[1]
        dk = ad.value(self.w_k).shape[1]
        if dq != dk:
            raise DimensionError(f"query width {dq} != key width {dk}")
        if ad.value(self.w_v).shape[1] != ad.value(self.w_o).shape[0]:
            raise DimensionError("value width does not match output projection")
        if self.heads < 1 or dq % self.heads:
            raise ArgumentError(f"head count {self.heads} must divide width {dq}")

    @property
    def d_x(self) -> int:
        return ad.value(self.w_q).shape[0]

    @property
    def d_c(self) -> int:
        return ad.value(self.w_k).shape[0]

    @property
    def d(self) -> int:
        return ad.value(self.w_q).shape[1]

    @classmethod
    def init(cls, rng: Rng, d_x: int, d_c: int, d: int, heads: int = 1, out_scale: float = 1.0):
        def w(shape, fan_in, s=1.0):
            return randn(rng, shape) * np.float32(s / math.sqrt(fan_in))

        return cls(
            w_q=w((d_x, d), d_x),
            w_k=w((d_c, d), d_c),
            w_v=w((d_c, d), d_c),
            w_o=w((d, d_x), d, out_scale),
            heads=heads,
        )


def _check_inputs(layer: CrossAttentionLayer, x, c_emb):
    xv, cv = ad.value(x), ad.value(c_emb)
    if cv.shape[-2] == 0:
        raise ArgumentError("conditioning has no tokens (N = 0)")
    if xv.shape[-1] != layer.d_x:
        raise DimensionError(f"x width {xv.shape[-1]} != layer d_x {layer.d_x}")
    if cv.shape[-1] != layer.d_c:
        raise DimensionError(f"c_emb width {cv.shape[-1]} != layer d_c {layer.d_c}")
    if xv.ndim != cv.ndim:
        raise DimensionError(f"x rank {xv.ndim} and c_emb rank {cv.ndim} differ")
    check_finite(xv, "attention query input")
    check_finite(cv, "conditioning embedding")


def _split_heads(t, heads: int):
    # (..., L, d) -> (..., h, L, d/h)
    v = ad.value(t)
    *lead, length, d = v.shape
    t = ad.reshape(t, (*lead, length, heads, d // heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return ad.transpose(t, axes)


def _merge_heads(t):
    v = ad.value(t)
    *lead, heads, length, dh = v.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    t = ad.transpose(t, axes)
    return ad.reshape(t, (*lead, length, heads * dh))


def score_map(layer: CrossAttentionLayer, x, c_emb, mode) -> np.ndarray:
    """The ``M x N`` score map (``heads x M x N`` when multi-head)."""
    mode = AttentionMode.parse(mode)
    _check_inputs(layer, x, c_emb)
    xv, cv = ad.value(x), ad.value(c_emb)
    m, n = xv.shape[-2], cv.shape[-2]
    lead = xv.shape[:-2]
    shape = (*lead, m, n) if layer.heads == 1 else (*lead, layer.heads, m, n)
    if mode is AttentionMode.UNIFORM:
        return np.full(shape, 1.0 / n, dtype=xv.dtype)
    if mode is AttentionMode.ZERO:
        return np.zeros(shape, dtype=xv.dtype)
    return ad.value(_standard_scores(layer, x, c_emb))


def _standard_scores(layer, x, c_emb):
    q = ad.matmul(x, layer.w_q)
    k = ad.matmul(c_emb, layer.w_k)
    dh = layer.d // layer.heads
    if layer.heads > 1:
        q = _split_heads(q, layer.heads)
        k = _split_heads(k, layer.heads)
    kt = ad.transpose(k, tuple(range(ad.value(k).ndim - 2)) + (-1, -2))
    logits = ad.scale(ad.matmul(q, kt), 1.0 / math.sqrt(dh))
    return ad.softmax(logits)


def attend(layer: CrossAttentionLayer, x, c_emb, mode):
    """Pre-projection attention output ``S V`` (``M x d``)."""
    mode = AttentionMode.parse(mode)
    _check_inputs(layer, x, c_emb)
    xv = ad.value(x)
    m = xv.shape[-2]
    if mode is AttentionMode.ZERO:
        return np.zeros((*xv.shape[:-1], layer.d), dtype=xv.dtype)
    v = ad.matmul(c_emb, layer.w_v)
    if mode is AttentionMode.UNIFORM:
        token_mean = ad.mean(v, axis=-2, keepdims=True)
        return ad.mul(np.ones((m, 1), dtype=xv.dtype), token_mean)
    s = _standard_scores(layer, x, c_emb)
    if layer.heads > 1:
        return _merge_heads(ad.matmul(s, _split_heads(v, layer.heads)))
    return ad.matmul(s, v)


def attention_update(layer: CrossAttentionLayer, x, c_emb, mode):
    """Residual cross-attention update.

    Returns ``(x_tilde, A)`` where ``A`` is the update term after the output
    projection (``M x d_x``) and ``x_tilde = x + A``. In ``ZERO`` mode
    ``x_tilde`` is ``x`` itself.
    """
    mode = AttentionMode.parse(mode)
    if mode is AttentionMode.ZERO:
        _check_inputs(layer, x, c_emb)
        return x, np.zeros_like(ad.value(x))
    a = ad.matmul(attend(layer, x, c_emb, mode), layer.w_o)
    return ad.add(x, a), a
