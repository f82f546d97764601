"""Epsilon-prediction training with Adam on the procedural shape dataset."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..attention import AttentionMode
from ..errors import ArgumentError, TrainingError
from ..numerics import autodiff as ad
from ..numerics.autodiff import Tape
from ..numerics.rng import Rng, randn
from ..numerics.tensor import DTYPE
from .data import Sample, generate_samples, to_latent
from .model import DenoiserModel, forward_batch
from .prompts import NULL_ID

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup: int = 200
    grad_clip: float = 1.0
    null_prob: float = 0.1
    ema_decay: float = 0.999
    pool_size: int = 4096
    lr_schedule: str = "constant"  # or "cosine": decays to 10% of lr by the last step


def learning_rate(tc: TrainConfig, step: int, steps: int) -> float:
    lr = tc.lr * min(1.0, (step + 1) / tc.warmup) if tc.warmup else tc.lr
    if tc.lr_schedule == "cosine":
        lr *= 0.1 + 0.45 * (1.0 + math.cos(math.pi * step / steps))
    return lr


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: Optional[float] = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            step = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            params[k] -= step.astype(params[k].dtype)


def diffusion_loss(params, cfg, x0, t, ids, eps, alpha_bar) -> tuple:
    """Tape-recorded mean squared noise-prediction error for one batch."""
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    ab = alpha_bar[t].astype(DTYPE)[:, None, None, None]
    z_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    pred, _ = forward_batch(leaves, cfg, z_t, t, ids, AttentionMode.STANDARD)
    diff = ad.sub(pred, eps)
    loss = ad.mean(ad.mul(diff, diff))
    return tape, loss


def train(
    model: DenoiserModel,
    dataset,
    schedule,
    steps: int,
    rng: Rng,
    config: TrainConfig | None = None,
    callback: Optional[Callable[[int, float], None]] = None,
    snapshot_every: int = 0,
    on_snapshot: Optional[Callable[[int, dict], None]] = None,
) -> list[float]:
    """Train ``model`` in place; returns the per-step loss curve.

    ``dataset`` is a list of :class:`Sample` (or ``(image, prompt)`` pairs),
    or ``None`` to draw a pool of ``config.pool_size`` samples from ``rng``.
    When ``config.ema_decay`` is nonzero the model ends up holding the
    exponential moving average of the weights. ``on_snapshot(steps_done,
    weights)`` sees the weights the model would hold if training stopped
    there, every ``snapshot_every`` steps.
    """
    if steps < 1:
        raise ArgumentError(f"steps must be >= 1, got {steps}")
    tc = config or TrainConfig(steps=steps)
    if tc.lr_schedule not in ("constant", "cosine"):
        raise ArgumentError(f"unknown lr schedule {tc.lr_schedule!r}")
    if dataset is None:
        dataset = generate_samples(rng.split(0xDA7A), tc.pool_size, model.cfg.image_size)
    images = np.stack([to_latent(s.image if isinstance(s, Sample) else s[0]) for s in dataset])
    tokens = np.array([(s.prompt if isinstance(s, Sample) else s[1]).tokens for s in dataset], dtype=np.int64)
    alpha_bar = np.asarray(schedule.alpha_bar, dtype=np.float64)
    T = len(alpha_bar) - 1

    params = model.params
    opt = Adam(params, tc.lr, tc.beta1, tc.beta2, tc.adam_eps)
    ema = {k: v.copy() for k, v in params.items()} if tc.ema_decay else None
    losses: list[float] = []
    bs = min(tc.batch_size, len(images))
    for step in range(steps):
        srng = rng.split(1, step)
        g = srng.generator
        idx = g.integers(0, len(images), bs)
        t = g.integers(1, T + 1, bs)  # t = 0 carries no noise, so its target is unobservable
        ids = tokens[idx].copy()
        ids[g.uniform(size=bs) < tc.null_prob] = NULL_ID
        eps = randn(srng.split(0), (bs, *images.shape[1:]))
        tape, loss = diffusion_loss(params, model.cfg, images[idx], t, ids, eps, alpha_bar)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError("loss diverged to a non-finite value", step)
        grads = tape.backward(loss)
        tape.release()
        norm = math.sqrt(sum(float(np.vdot(gv, gv)) for gv in grads.values()))
        if not math.isfinite(norm):
            raise TrainingError("non-finite gradient", step)
        if tc.grad_clip and norm > tc.grad_clip:
            s = DTYPE(tc.grad_clip / norm)
            grads = {k: gv * s for k, gv in grads.items()}
        opt.step(params, grads, learning_rate(tc, step, steps))
        if ema is not None:
            d = DTYPE(tc.ema_decay)
            for k, v in params.items():
                ema[k] *= d
                ema[k] += (DTYPE(1.0) - d) * v
        losses.append(value)
        if callback is not None:
            callback(step, value)
        if snapshot_every and on_snapshot is not None and (step + 1) % snapshot_every == 0 and step + 1 < steps:
            on_snapshot(step + 1, ema if ema is not None else params)
    if ema is not None:
        model.params.update(ema)
    return losses
