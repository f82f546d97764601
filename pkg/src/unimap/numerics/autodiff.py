"""Minimal reverse-mode differentiation over the op set used by the denoiser.

Every op accepts ``Var`` or plain arrays. When at least one input is a
``Var`` the result is recorded on that input's tape; otherwise the op
returns a plain array, so inference runs with no bookkeeping at all.

Recording order is a topological order of the graph, so ``Tape.backward``
walks ``tape.nodes`` in reverse.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ArgumentError, DimensionError


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "tape", "name", "op")

    def __init__(self, value, tape: "Tape", parents=(), backward_fn=None, name=None, op="leaf"):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.tape = tape
        self.name = name
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape}, name={self.name})"


class Tape:
    """Records the forward ops of one training step."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def leaf(self, value, name=None) -> Var:
        v = Var(np.asarray(value), self, name=name)
        self.nodes.append(v)
        self.leaves.append(v)
        return v

    def record(self, value, parents, backward_fn, op) -> Var:
        v = Var(value, self, parents, backward_fn, op=op)
        self.nodes.append(v)
        return v

    def backward(self, loss: Var) -> dict:
        """Fill ``.grad`` on every node reachable from ``loss``.

        Returns ``{leaf.name or index: grad}`` for the tape's leaves; leaves
        the loss does not depend on get zero gradients.
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ArgumentError("loss must be a Var recorded on this tape")
        if loss.value.size != 1:
            raise ArgumentError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        # nodes after the loss cannot contribute to it
        stop = self.nodes.index(loss)
        for node in reversed(self.nodes[: stop + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not isinstance(parent, Var):
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
        out = {}
        for i, leaf in enumerate(self.leaves):
            g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
            out[leaf.name if leaf.name is not None else i] = g
        return out

    def release(self) -> None:
        """Drop recorded nodes; Var <-> Tape references would otherwise form a cycle."""
        for node in self.nodes:
            node.backward_fn = None
            node.parents = ()
        self.nodes.clear()
        self.leaves.clear()


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Optional[Tape]:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _wrap(out, inputs: Sequence, backward_fn: Callable, op: str):
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    return tape.record(out, inputs, backward_fn, op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _wrap(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    sa, sb = np.shape(av), np.shape(bv)
    return _wrap(out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    sa, sb = np.shape(av), np.shape(bv)

    def backward(g):
        return _unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)

    return _wrap(out, (a, b), backward, "mul")


def scale(a, c: float):
    av = value(a)
    out = av * av.dtype.type(c)
    return _wrap(out, (a,), lambda g: (g * g.dtype.type(c),), "scale")


def matmul(a, b):
    """``a @ b`` for 2-D @ 2-D, batched @ 2-D, or batched @ batched."""
    av, bv = value(a), value(b)
    if av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dimensions differ: {av.shape} @ {bv.shape}")
    out = av @ bv

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        if bv.ndim == 2 and av.ndim > 2:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _wrap(out, (a, b), backward, "matmul")


def silu(a):
    av = value(a)
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))  # logistic without exp overflow
    out = av * sig

    def backward(g):
        return (g * sig * (1.0 + av * (1.0 - sig)),)

    return _wrap(out, (a,), backward, "silu")


def softmax(a):
    """Softmax over the last axis."""
    av = value(a)
    e = np.exp(av - av.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _wrap(s, (a,), backward, "softmax")


def reshape(a, shape):
    av = value(a)
    out = av.reshape(shape)
    return _wrap(out, (a,), lambda g: (g.reshape(av.shape),), "reshape")


def transpose(a, axes):
    av = value(a)
    axes = tuple(ax % av.ndim for ax in axes)
    out = np.transpose(av, axes)
    inv = np.argsort(axes)
    return _wrap(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def mean(a, axis=None, keepdims=False):
    av = value(a)
    out = np.asarray(av.mean(axis=axis, keepdims=keepdims), dtype=av.dtype)
    n = av.size // max(out.size, 1) if axis is not None else av.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / g.dtype.type(n), av.shape).astype(av.dtype),)

    return _wrap(out, (a,), backward, "mean")


def sum_(a, axis=None, keepdims=False):
    av = value(a)
    out = np.asarray(av.sum(axis=axis, keepdims=keepdims), dtype=av.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).astype(av.dtype),)

    return _wrap(out, (a,), backward, "sum")


def concat(xs: Sequence, axis: int):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _wrap(out, tuple(xs), backward, "concat")


def upsample2x(a):
    """Nearest-neighbour 2x upsampling of an NHWC map."""
    av = value(a)
    out = av.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g):
        b, h, w, c = av.shape
        return (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _wrap(out, (a,), backward, "upsample2x")


def conv2d(x, w, stride: int = 1, padding: int = 1):
    """2-D cross-correlation of an NHWC map with an HWIO square kernel.

    Implemented as im2col followed by a single matrix product; the column
    layout is ``(kh, kw, C)`` so both gathers copy contiguous channel runs.
    """
    xv, wv = value(x), value(w)
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[3] != wv.shape[2]:
        raise DimensionError(f"conv2d shape mismatch: x {xv.shape}, w {wv.shape}")
    b, h, wd, c = xv.shape
    k, k2, _, o = wv.shape
    if k != k2:
        raise DimensionError("conv2d kernels must be square")
    if padding:
        xp = np.zeros((b, h + 2 * padding, wd + 2 * padding, c), dtype=xv.dtype)
        xp[:, padding : padding + h, padding : padding + wd] = xv
    else:
        xp = xv
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = np.empty((b, ho, wo, k, k, c), dtype=xv.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    cols = cols.reshape(b * ho * wo, k * k * c)
    wmat = wv.reshape(k * k * c, o)
    out = (cols @ wmat).reshape(b, ho, wo, o)

    def backward(g):
        g2 = g.reshape(-1, o)
        gw = (cols.T @ g2).reshape(wv.shape)
        dcols = (g2 @ wmat.T).reshape(b, ho, wo, k, k, c)
        dxp = np.zeros((b, hp, wp, c), dtype=xv.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
        gx = dxp[:, padding : padding + h, padding : padding + wd] if padding else dxp
        return gx, gw

    return _wrap(out, (x, w), backward, "conv2d")
