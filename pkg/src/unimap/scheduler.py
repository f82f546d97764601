"""Linear-beta noise schedule, deterministic DDIM stepping and inversion.

Timesteps index the full diffusion chain ``0..T``; ``alpha_bar[t]`` is the
cumulative signal coefficient, ``alpha_bar[0] == 1``. A DDIM run visits the
subsequence ``stride, 2*stride, ..., T`` with ``stride = T // ddim_steps``
and the last reverse step lands on ``t = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .attention import AttentionMode
from .errors import ArgumentError, DimensionError
from .numerics import utns
from .numerics.tensor import check_finite


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    ddim_steps: int
    alpha_bar: np.ndarray = field(repr=False, compare=False)
    timesteps: np.ndarray = field(repr=False, compare=False)

    @property
    def stride(self) -> int:
        return self.T // self.ddim_steps

    def reverse_pairs(self) -> list[tuple[int, int]]:
        """``(t, t_prev)`` for each reverse step, from ``T`` down to 0."""
        ts = [int(t) for t in self.timesteps[::-1]]
        return list(zip(ts, ts[1:] + [0]))

    def inversion_pairs(self) -> list[tuple[int, int]]:
        """``(t_prev, t)`` for each inversion step, from 0 up to ``T``."""
        ts = [0] + [int(t) for t in self.timesteps]
        return list(zip(ts[:-1], ts[1:]))

    def with_steps(self, ddim_steps: int) -> "NoiseSchedule":
        return make_schedule(self.T, self.beta_start, self.beta_end, ddim_steps)


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02, ddim_steps: int = 20) -> NoiseSchedule:
    if T < 1:
        raise ArgumentError(f"T must be positive, got {T}")
    if not 1 <= ddim_steps <= T:
        raise ArgumentError(f"ddim_steps must be in [1, {T}], got {ddim_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ArgumentError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    stride = T // ddim_steps
    timesteps = np.arange(1, ddim_steps + 1, dtype=np.int64) * stride
    return NoiseSchedule(T, beta_start, beta_end, ddim_steps, alpha_bar, timesteps)


def _ab(sched: NoiseSchedule, t) -> float:
    if isinstance(sched, NoiseSchedule):
        if not 0 <= t <= sched.T:
            raise ArgumentError(f"timestep {t} outside [0, {sched.T}]")
        return float(sched.alpha_bar[t])
    return float(sched[t])


def _f(x, dtype):
    return dtype.type(x) if isinstance(dtype, np.dtype) else x


def _clean(z_t, eps, ab: float):
    dt = np.asarray(z_t).dtype
    return (z_t - _f(math.sqrt(1.0 - ab), dt) * eps) / _f(math.sqrt(ab), dt)


def predict_clean(z_t, eps, t: int, sched) -> np.ndarray:
    """``(z_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)``.

    ``sched`` may be a :class:`NoiseSchedule` or any mapping from timestep to
    ``alpha_bar``.
    """
    if t <= 0:
        raise ArgumentError("predict_clean needs t > 0")
    return _clean(z_t, eps, _ab(sched, t))


def ddim_reverse_step(z_t, eps, t: int, t_prev: int, sched):
    if not t > t_prev >= 0:
        raise ArgumentError(f"reverse step needs t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab, ab_prev = _ab(sched, t), _ab(sched, t_prev)
    dt = np.asarray(z_t).dtype
    z0 = _clean(z_t, eps, ab)
    return _f(math.sqrt(1.0 - ab_prev), dt) * eps + _f(math.sqrt(ab_prev), dt) * z0


def ddim_inversion_step(z_prev, eps_at_prev, t_prev: int, t: int, sched):
    if not t > t_prev >= 0:
        raise ArgumentError(f"inversion step needs t > t_prev >= 0, got t_prev={t_prev}, t={t}")
    ab, ab_prev = _ab(sched, t), _ab(sched, t_prev)
    dt = np.asarray(z_prev).dtype
    z0 = _clean(z_prev, eps_at_prev, ab_prev)
    return _f(math.sqrt(1.0 - ab), dt) * eps_at_prev + _f(math.sqrt(ab), dt) * z0


def cfg_combine(eps_cond, eps_uncond, w: float):
    eps_cond, eps_uncond = np.asarray(eps_cond), np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise DimensionError(f"guidance shapes differ: {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_uncond + eps_cond.dtype.type(w) * (eps_cond - eps_uncond)


# --- trajectories -----------------------------------------------------------


@dataclass
class TrajectoryRecord:
    t: int
    z_t: np.ndarray
    z0_hat: np.ndarray
    a_terms: list


@dataclass
class Trajectory:
    direction: str  # "inversion" or "reverse"
    records: list = field(default_factory=list)
    final: Optional[np.ndarray] = None

    def append(self, rec: TrajectoryRecord):
        if self.records:
            last = self.records[-1].t
            ok = rec.t > last if self.direction == "inversion" else rec.t < last
            if not ok:
                raise ArgumentError(f"non-monotone timestep {rec.t} after {last} in {self.direction}")
        self.records.append(rec)

    @property
    def timesteps(self) -> list[int]:
        return [r.t for r in self.records]

    def __len__(self):
        return len(self.records)

    def select(self, i: int) -> "Trajectory":
        """Per-image view of a batched trajectory."""
        out = Trajectory(self.direction)
        out.records = [TrajectoryRecord(r.t, r.z_t[i], r.z0_hat[i], [a[i] for a in r.a_terms]) for r in self.records]
        out.final = None if self.final is None else self.final[i]
        return out

    def dump(self, out_dir) -> None:
        """Write one UTNS file per record field plus ``manifest.txt``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = [f"direction {self.direction}", f"records {len(self.records)}"]
        for i, rec in enumerate(self.records):
            utns.save(out / f"{i:03d}_z_t.utns", rec.z_t)
            utns.save(out / f"{i:03d}_z0_hat.utns", rec.z0_hat)
            names = [f"{i:03d}_z_t.utns", f"{i:03d}_z0_hat.utns"]
            for j, a in enumerate(rec.a_terms):
                name = f"{i:03d}_A{j}.utns"
                utns.save(out / name, a)
                names.append(name)
            lines.append(f"record {i} t={rec.t} files={','.join(names)}")
        if self.final is not None:
            utns.save(out / "final.utns", self.final)
            lines.append("final final.utns")
        (out / "manifest.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, in_dir) -> "Trajectory":
        src = Path(in_dir)
        lines = (src / "manifest.txt").read_text().splitlines()
        traj = cls(direction=lines[0].split()[1])
        for line in lines[2:]:
            parts = line.split()
            if parts[0] == "record":
                t = int(parts[2].split("=")[1])
                files = parts[3].split("=")[1].split(",")
                traj.records.append(
                    TrajectoryRecord(
                        t=t,
                        z_t=utns.load(src / files[0]),
                        z0_hat=utns.load(src / files[1]),
                        a_terms=[utns.load(src / f) for f in files[2:]],
                    )
                )
            elif parts[0] == "final":
                traj.final = utns.load(src / parts[1])
        return traj


@dataclass
class SamplerConfig:
    """How to query the denoiser during a DDIM run.

    ``prompt`` feeds both keys and values (only values in uniform mode);
    ``null_prompt`` is used for the unconditional branch when ``w != 1``.
    """

    prompt: object = None
    mode: AttentionMode = AttentionMode.STANDARD
    w: float = 1.0
    null_prompt: object = None

    def __post_init__(self):
        self.mode = AttentionMode.parse(self.mode)
        if self.w < 0:
            raise ArgumentError(f"guidance scale must be >= 0, got {self.w}")


# eps_fn(z, t, prompt, mode) -> (eps, captured A-terms)
EpsFn = Callable[..., tuple]


def _as_eps_fn(model) -> EpsFn:
    if hasattr(model, "predict"):
        return model.predict
    return model


def guided_eps(model, z, t: int, cfg: SamplerConfig):
    fn = _as_eps_fn(model)
    eps, captured = fn(z, t, cfg.prompt, cfg.mode)
    if cfg.w != 1.0:
        eps_u, _ = fn(z, t, cfg.null_prompt, cfg.mode)
        eps = cfg_combine(eps, eps_u, cfg.w)
    return check_finite(np.asarray(eps), "noise prediction"), captured


def invert(z0, model, sched: NoiseSchedule, cfg: SamplerConfig) -> Trajectory:
    """Map a clean latent to ``z_T`` with the adjacent-step approximation.

    ``model`` is anything with ``predict(z, t, prompt, mode) -> (eps, A_terms)``
    or a callable with that signature. Record ``k`` holds the evaluation at
    the lower timestep of inversion step ``k``.
    """
    traj = Trajectory("inversion")
    z = np.asarray(z0)
    for t_prev, t in sched.inversion_pairs():
        eps, captured = guided_eps(model, z, t_prev, cfg)
        z0_hat = _clean(z, eps, _ab(sched, t_prev))
        traj.append(TrajectoryRecord(t_prev, z, z0_hat, captured))
        z = ddim_inversion_step(z, eps, t_prev, t, sched)
    traj.final = z
    return traj


def reconstruct(z_T, model, sched: NoiseSchedule, cfg: SamplerConfig) -> Trajectory:
    traj = Trajectory("reverse")
    z = np.asarray(z_T)
    for t, t_prev in sched.reverse_pairs():
        eps, captured = guided_eps(model, z, t, cfg)
        z0_hat = _clean(z, eps, _ab(sched, t))
        traj.append(TrajectoryRecord(t, z, z0_hat, captured))
        z = ddim_reverse_step(z, eps, t, t_prev, sched)
    traj.final = z
    return traj


def paired_records(traj_inv: Trajectory, traj_rec: Trajectory):
    """Pair inversion record ``k`` with reconstruction record ``S - 1 - k``."""
    if len(traj_inv) != len(traj_rec):
        raise ArgumentError(f"trajectory lengths differ: {len(traj_inv)} vs {len(traj_rec)}")
    n = len(traj_inv)
    return [(traj_inv.records[k], traj_rec.records[n - 1 - k]) for k in range(n)]
