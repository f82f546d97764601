"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

import numpy as np

from .autodiff import Tape


def numeric_grad(fn, inputs: list, index: int, h: float = 1e-3) -> np.ndarray:
    """d fn / d inputs[index] by central differences, with plain-array inputs."""
    x = inputs[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = float(np.sum(fn(*inputs)))
        x[i] = old - h
        down = float(np.sum(fn(*inputs)))
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def analytic_grads(fn, inputs: list) -> list:
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    loss = fn(*leaves)
    grads = tape.backward(loss)
    tape.release()
    return [grads[i] for i in range(len(inputs))]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b)) / scale


def check_gradients(fn, inputs: list, h: float = 1e-3) -> list:
    """Relative error per input between tape and finite-difference gradients.

    ``fn`` maps its inputs (``Var`` or arrays) to a scalar; inputs should be
    float64 so the differences are not swamped by rounding.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    ana = analytic_grads(fn, inputs)
    return [relative_error(ana[i], numeric_grad(fn, inputs, i, h)) for i in range(len(inputs))]
