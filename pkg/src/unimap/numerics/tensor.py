"""Dense tensor helpers.

Tensors are plain ``numpy.ndarray`` values in float32. The functions here add
the shape and finiteness checks the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, DimensionError, NonFiniteError

DTYPE = np.float32


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=dtype))


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of ``a`` [m x k] and ``b`` [k x n]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul result")


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    x = check_finite(np.asarray(x), "softmax input")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def quantile(x, q: float) -> float:
    """Linear-interpolation quantile at fractional rank ``q * (n - 1)``."""
    flat = np.sort(np.asarray(x, dtype=np.float64).ravel())
    if flat.size == 0:
        raise ArgumentError("quantile of an empty tensor")
    if not 0.0 <= q <= 1.0:
        raise ArgumentError(f"quantile level must be in [0, 1], got {q}")
    rank = q * (flat.size - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, flat.size - 1)
    frac = rank - lo
    if frac == 0.0:
        return float(flat[lo])
    return float(flat[lo] + (flat[hi] - flat[lo]) * frac)
