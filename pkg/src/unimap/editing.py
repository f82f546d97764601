"""Adaptive mask-guided editing over three lock-stepped DDIM branches.

* auxiliary: uniform attention, null prompt for the values
* source: standard attention, source prompt
* target: standard attention, target prompt, started from the source ``z_T``

At every reverse step the target and source clean predictions are compared
per pixel; pixels whose difference is at most the ``q``-quantile form a mask
that is dilated with a square kernel. Below ``t_mask`` the masked pixels of
the target's clean prediction are replaced by the auxiliary branch's.

Single latents ``(C,H,W)`` and batches ``(B,C,H,W)`` are both accepted; the
quantile is taken per image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionMode
from .denoiser.prompts import Prompt
from .errors import ArgumentError, DimensionError
from .numerics.tensor import DTYPE, quantile
from .scheduler import NoiseSchedule, SamplerConfig, _clean, guided_eps, invert


@dataclass
class EditConfig:
    source: Prompt
    target: Prompt
    quantile: float = 0.5
    t_mask: int = 200
    kernel: int = 3
    guidance: float = 1.0
    T: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.quantile <= 1.0:
            raise ArgumentError(f"quantile must be in [0, 1], got {self.quantile}")
        if not 0 <= self.t_mask <= self.T:
            raise ArgumentError(f"t_mask must be in [0, {self.T}], got {self.t_mask}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ArgumentError(f"dilation kernel must be odd and >= 1, got {self.kernel}")


def compute_diff(z0_tgt, z0_src) -> np.ndarray:
    """Channel-mean absolute difference: ``(C,H,W) -> (H,W)``, batched too."""
    a, b = np.asarray(z0_tgt), np.asarray(z0_src)
    if a.shape != b.shape:
        raise DimensionError(f"clean predictions differ in shape: {a.shape} vs {b.shape}")
    return np.abs(a - b).mean(axis=-3)


def dilate(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Binary dilation with a ``kernel x kernel`` square, window clamped at borders."""
    m = np.asarray(mask).astype(bool)
    if kernel == 1:
        return m.astype(DTYPE)
    r = kernel // 2
    pad = [(0, 0)] * (m.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(m, pad, mode="edge")
    out = np.zeros_like(m)
    h, w = m.shape[-2:]
    for i in range(kernel):
        for j in range(kernel):
            out |= padded[..., i : i + h, j : j + w]
    return out.astype(DTYPE)


def adaptive_mask(diff: np.ndarray, q: float, kernel: int = 3) -> np.ndarray:
    """Preserve-mask: ``dilate(diff <= quantile(diff, q))`` as 0/1 floats."""
    d = np.asarray(diff)
    if np.any(d < 0):
        raise ArgumentError("difference map must be nonnegative")
    if d.ndim == 2:
        lam = quantile(d, q)
        return dilate(d <= lam, kernel)
    return np.stack([adaptive_mask(di, q, kernel) for di in d])


def blend_clean(z0_aux, z0_tgt, mask) -> np.ndarray:
    """``mask * z0_aux + (1 - mask) * z0_tgt`` with the mask broadcast over channels."""
    a, t = np.asarray(z0_aux), np.asarray(z0_tgt)
    m = np.asarray(mask, dtype=a.dtype)
    if a.shape != t.shape:
        raise DimensionError(f"blend operands differ in shape: {a.shape} vs {t.shape}")
    if m.shape != a.shape[:-3] + a.shape[-2:]:
        raise DimensionError(f"mask shape {m.shape} does not match images {a.shape}")
    m = np.expand_dims(m, -3)
    return m * a + (1 - m) * t


def step_from_clean(z0_hat, eps, ab_prev: float):
    dt = np.asarray(z0_hat).dtype
    return dt.type(math.sqrt(1.0 - ab_prev)) * eps + dt.type(math.sqrt(ab_prev)) * z0_hat


@dataclass
class EditResult:
    output: np.ndarray  # final target-branch latent
    masks: list  # per reverse step, (H,W) or (B,H,W)
    timesteps: list
    auxiliary: np.ndarray  # final auxiliary-branch latent
    source: np.ndarray  # final source-branch latent
    blended: list = field(default_factory=list)  # whether blending ran at each step
    clean: dict = field(default_factory=dict)  # branch -> list of per-step clean predictions


def branch_configs(cfg: EditConfig) -> dict:
    null = Prompt.null()
    return {
        "aux": SamplerConfig(null, AttentionMode.UNIFORM, cfg.guidance, null),
        "src": SamplerConfig(cfg.source, AttentionMode.STANDARD, cfg.guidance, null),
        "tgt": SamplerConfig(cfg.target, AttentionMode.STANDARD, cfg.guidance, null),
    }


def invert_branches(z0, cfg: EditConfig, model, sched: NoiseSchedule):
    """Noise latents ``(z_aux_T, z_src_T)``; reusable across mask settings."""
    branches = branch_configs(cfg)
    z0 = np.asarray(z0, dtype=DTYPE)
    return invert(z0, model, sched, branches["aux"]).final, invert(z0, model, sched, branches["src"]).final


def edit(z0, cfg: EditConfig, model, sched: NoiseSchedule, keep_clean: bool = False, inverted=None) -> EditResult:
    """Run the three-branch adaptive-mask edit of ``z0``.

    ``cfg.source`` / ``cfg.target`` may be single prompts or, for batched
    ``z0``, lists with one prompt per image. ``inverted`` may carry the
    result of :func:`invert_branches` to skip both inversions.
    """
    z0 = np.asarray(z0, dtype=DTYPE)
    if cfg.T != sched.T:
        raise ArgumentError(f"edit config T={cfg.T} does not match schedule T={sched.T}")
    branches = branch_configs(cfg)
    if inverted is None:
        inverted = invert_branches(z0, cfg, model, sched)
    z_u, z_src = (np.array(z, dtype=DTYPE) for z in inverted)
    if z_u.shape != z0.shape or z_src.shape != z0.shape:
        raise DimensionError(f"inverted latents {z_u.shape}/{z_src.shape} do not match input {z0.shape}")
    z_tgt = z_src.copy()

    masks, timesteps, blended = [], [], []
    clean = {"aux": [], "src": [], "tgt": []}
    for t, t_prev in sched.reverse_pairs():
        ab, ab_prev = float(sched.alpha_bar[t]), float(sched.alpha_bar[t_prev])
        eps_u, _ = guided_eps(model, z_u, t, branches["aux"])
        z0_u = _clean(z_u, eps_u, ab)
        eps_src, _ = guided_eps(model, z_src, t, branches["src"])
        z0_src = _clean(z_src, eps_src, ab)
        eps_tgt, _ = guided_eps(model, z_tgt, t, branches["tgt"])
        z0_tgt = _clean(z_tgt, eps_tgt, ab)

        mask = adaptive_mask(compute_diff(z0_tgt, z0_src), cfg.quantile, cfg.kernel)
        active = t < cfg.t_mask
        if active:
            z0_tgt = blend_clean(z0_u, z0_tgt, mask)
        masks.append(mask)
        timesteps.append(t)
        blended.append(active)
        if keep_clean:
            clean["aux"].append(z0_u)
            clean["src"].append(z0_src)
            clean["tgt"].append(z0_tgt)

        z_tgt = step_from_clean(z0_tgt, eps_tgt, ab_prev)
        z_src = step_from_clean(z0_src, eps_src, ab_prev)
        z_u = step_from_clean(z0_u, eps_u, ab_prev)
    return EditResult(z_tgt, masks, timesteps, z_u, z_src, blended, clean if keep_clean else {})
