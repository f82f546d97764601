"""Fidelity metrics and the attention-discrepancy / correlation analysis.

Images are compared in ``[0, 1]``. PSNR uses a peak of 1 and reports
``math.inf`` for identical inputs. SSIM uses a uniform 7x7 window over all
fully-contained window positions with population (biased) moments,
``C1 = 0.01**2`` and ``C2 = 0.03**2``, averaged over channels.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DimensionError, UndefinedCorrelationError
from .scheduler import Trajectory, paired_records

SSIM_WINDOW = 7
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr_from_mse(err: float) -> float:
    if err < 0:
        raise ArgumentError(f"mse must be nonnegative, got {err}")
    if err == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    if a.min(initial=0.0) < 0.0 or b.min(initial=0.0) < 0.0 or a.max(initial=0.0) > 1.0 or b.max(initial=0.0) > 1.0:
        raise ArgumentError("psnr expects pixel values in [0, 1]")
    return psnr_from_mse(mse(a, b))


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    k = SSIM_WINDOW
    wa = sliding_window_view(a, (k, k))
    wb = sliding_window_view(b, (k, k))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean SSIM of ``(H, W)`` or ``(C, H, W)`` images in ``[0, 1]``."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise DimensionError(f"ssim expects (H, W) or (C, H, W), got {a.shape}")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ArgumentError(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    return float(np.mean([_ssim_channel(ac, bc) for ac, bc in zip(a, b)]))


# --- trajectory discrepancies ----------------------------------------------


def _check_capture(traj_inv: Trajectory, traj_rec: Trajectory):
    if len(traj_inv) == 0 or len(traj_inv) != len(traj_rec):
        raise ArgumentError(f"trajectories have {len(traj_inv)} and {len(traj_rec)} records")
    pairs = paired_records(traj_inv, traj_rec)
    for ri, rr in pairs:
        if len(ri.a_terms) != len(rr.a_terms):
            raise ArgumentError("trajectories captured different numbers of attention layers")
        for ai, ar in zip(ri.a_terms, rr.a_terms):
            if np.shape(ai) != np.shape(ar):
                raise ArgumentError(f"captured update terms differ in shape: {np.shape(ai)} vs {np.shape(ar)}")
    return pairs


def attention_discrepancy(traj_inv: Trajectory, traj_rec: Trajectory) -> float:
    """Sum over paired steps and layers of the pixel-mean squared A-term gap."""
    total = 0.0
    for ri, rr in _check_capture(traj_inv, traj_rec):
        for ai, ar in zip(ri.a_terms, rr.a_terms):
            total += mse(ai, ar)
    return total


def clean_discrepancy(traj_inv: Trajectory, traj_rec: Trajectory) -> float:
    """Sum over paired steps of the MSE between clean-image predictions."""
    if len(traj_inv) == 0 or len(traj_inv) != len(traj_rec):
        raise ArgumentError(f"trajectories have {len(traj_inv)} and {len(traj_rec)} records")
    return sum(mse(ri.z0_hat, rr.z0_hat) for ri, rr in paired_records(traj_inv, traj_rec))


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ArgumentError(f"pearson needs two equal-length lists, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ArgumentError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# --- reports ----------------------------------------------------------------

CSV_COLUMNS = ("image_id", "mode", "prompt_regime", "mse", "psnr_db", "ssim", "attn_discrepancy")


@dataclass
class ReconRow:
    image_id: int
    mode: str
    prompt_regime: str
    mse: float
    psnr_db: float
    ssim: float
    attn_discrepancy: float


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


@dataclass
class ReconReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: ReconRow):
        self.rows.append(row)

    def regimes(self) -> list:
        seen = []
        for r in self.rows:
            if r.prompt_regime not in seen:
                seen.append(r.prompt_regime)
        return seen

    def column(self, name: str, regime: str | None = None) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if regime is None or r.prompt_regime == regime], dtype=np.float64)

    def aggregates(self) -> dict:
        """``{regime: {metric: (mean, std)}}`` over rows of that regime."""
        out = {}
        for regime in self.regimes():
            stats = {}
            for name in ("mse", "psnr_db", "ssim", "attn_discrepancy"):
                col = self.column(name, regime)
                with np.errstate(invalid="ignore"):  # std of an all-inf PSNR column is nan
                    stats[name] = (float(np.mean(col)), float(np.std(col)))
            out[regime] = stats
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "ReconReport":
        rep = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                rep.add(
                    ReconRow(
                        int(rec["image_id"]),
                        rec["mode"],
                        rec["prompt_regime"],
                        float(rec["mse"]),
                        float(rec["psnr_db"]),
                        float(rec["ssim"]),
                        float(rec["attn_discrepancy"]),
                    )
                )
        return rep

    def summary_table(self) -> str:
        lines = [f"{'regime':<18}{'mse':>12}{'psnr_db':>10}{'ssim':>9}{'attn_disc':>12}"]
        for regime, s in self.aggregates().items():
            lines.append(
                f"{regime:<18}{s['mse'][0]:>12.6f}{s['psnr_db'][0]:>10.3f}{s['ssim'][0]:>9.4f}{s['attn_discrepancy'][0]:>12.6f}"
            )
        return "\n".join(lines)
