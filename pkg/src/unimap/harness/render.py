"""PPM image I/O, attention heatmaps and report figures."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..errors import ArgumentError, FormatError

_TABLE = None


def color_table() -> np.ndarray:
    """Fixed 256-entry RGB table (viridis), uint8, shape (256, 3)."""
    global _TABLE
    if _TABLE is None:
        from matplotlib import colormaps

        rgba = colormaps["viridis"](np.linspace(0.0, 1.0, 256))
        _TABLE = np.round(rgba[:, :3] * 255.0).astype(np.uint8)
        _TABLE.setflags(write=False)
    return _TABLE


# --- PPM ------------------------------------------------------------------


def to_uint8(image) -> np.ndarray:
    """Float ``(C,H,W)`` or ``(H,W)`` in [0, 1] -> ``(H,W,3)`` uint8.

    uint8 input is taken to be ``(H,W,3)`` already and passed through.
    """
    a = np.asarray(image)
    if a.dtype == np.uint8:
        if a.ndim != 3 or a.shape[-1] != 3:
            raise ArgumentError(f"uint8 images must be (H, W, 3), got {a.shape}")
        return np.ascontiguousarray(a)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ArgumentError(f"float images must be (C, H, W) with C in (1, 3), got {a.shape}")
    a = np.moveaxis(np.broadcast_to(a, (3,) + a.shape[1:]), 0, -1)
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image) -> bytes:
    rgb = to_uint8(image)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_ppm(path, image) -> None:
    Path(path).write_bytes(encode_ppm(image))


def _tokens(buf: bytes, count: int):
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
            j += 1
        if j == i:
            raise FormatError("truncated PPM header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # one whitespace byte separates header and raster


def decode_ppm(buf: bytes) -> np.ndarray:
    """Binary P6 with maxval 255 -> ``(H,W,3)`` uint8."""
    (magic, w, h, maxval), start = _tokens(buf, 4)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}")
    n = w * h * 3
    if len(buf) - start < n:
        raise FormatError(f"PPM raster truncated: need {n} bytes, have {len(buf) - start}")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=start).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


# --- heatmaps ---------------------------------------------------------------


def heatmap_indices(tensor) -> np.ndarray:
    """Sum an update term over its feature axis and map to table indices.

    Accepts ``(M,)`` or ``(M, d_x)``; ``M`` must be a perfect square. A
    constant input maps entirely to index 0.
    """
    a = np.asarray(tensor, dtype=np.float64)
    if a.ndim == 2:
        a = a.sum(axis=-1)
    elif a.ndim != 1:
        raise ArgumentError(f"heatmap expects (M,) or (M, d_x), got {a.shape}")
    m = a.size
    side = math.isqrt(m)
    if m == 0 or side * side != m:
        raise ArgumentError(f"{m} elements do not form a square grid")
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        idx = np.round((a - lo) / (hi - lo) * 255.0).astype(np.int64)
    else:
        idx = np.zeros(m, dtype=np.int64)
    return idx.reshape(side, side)


def render_heatmap(tensor, path=None, scale: int = 1) -> np.ndarray:
    """Heatmap as ``(S,S,3)`` uint8; also written as PPM when ``path`` is given."""
    rgb = color_table()[heatmap_indices(tensor)]
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    if path is not None:
        write_ppm(path, rgb)
    return rgb


def mask_image(mask, scale: int = 1) -> np.ndarray:
    m = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    if scale > 1:
        m = np.repeat(np.repeat(m, scale, axis=0), scale, axis=1)
    return np.repeat(m[..., None], 3, axis=-1)


# --- figures ------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    _pyplot().close(fig)


def plot_recon_bars(aggregates: dict, path) -> None:
    """Bar chart of mean MSE and PSNR (with std error bars) per prompt regime."""
    plt = _pyplot()
    names = list(aggregates)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, key, label in ((axes[0], "mse", "MSE"), (axes[1], "psnr_db", "PSNR (dB)")):
        means = [aggregates[n][key][0] for n in names]
        stds = [aggregates[n][key][1] for n in names]
        finite = [m if math.isfinite(m) else 0.0 for m in means]
        ax.bar(range(len(names)), finite, yerr=[s if math.isfinite(s) else 0.0 for s in stds], color="#4c72b0", capsize=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=35, ha="right", fontsize=8)
        ax.set_ylabel(label)
    fig.tight_layout()
    _save(fig, path)


def plot_correlation(xs, ys, r: float, path) -> None:
    plt = _pyplot()
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(x, y, s=10, alpha=0.7, color="#4c72b0")
    if x.size >= 2 and np.ptp(x) > 0:
        slope, icept = np.polyfit(x, y, 1)
        xx = np.linspace(x.min(), x.max(), 50)
        ax.plot(xx, slope * xx + icept, color="red", lw=1.5)
    ax.set_xlabel("attention-term discrepancy")
    ax.set_ylabel("clean-prediction discrepancy")
    ax.set_title(f"r = {r:.3f}, n = {x.size}")
    fig.tight_layout()
    _save(fig, path)


def plot_edit_ablation(rows: list, path) -> None:
    """Background MSE and target success against q, one line per t_mask."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    t_masks = sorted({r["t_mask"] for r in rows if r["quantile"] >= 0})
    for tm in t_masks:
        sel = sorted((r for r in rows if r["t_mask"] == tm and r["quantile"] >= 0), key=lambda r: r["quantile"])
        qs = [r["quantile"] for r in sel]
        axes[0].plot(qs, [r["bg_mse"] for r in sel], marker="o", label=f"t_mask={tm}")
        axes[1].plot(qs, [r["target_success"] for r in sel], marker="o", label=f"t_mask={tm}")
    base = [r for r in rows if r["quantile"] < 0]
    if base:
        axes[0].axhline(base[0]["bg_mse"], color="gray", ls="--", label="no mask")
        axes[1].axhline(base[0]["target_success"], color="gray", ls="--", label="no mask")
    axes[0].set_xlabel("quantile q")
    axes[0].set_ylabel("background MSE")
    axes[1].set_xlabel("quantile q")
    axes[1].set_ylabel("target success rate")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_heatmap_panels(maps: list, titles: list, path) -> None:
    """Grid of update-term heatmaps (one panel per step)."""
    plt = _pyplot()
    n = len(maps)
    cols = min(n, 5)
    rows = max(1, math.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, m, title in zip(axes.flat, maps, titles):
        ax.imshow(render_heatmap(m), interpolation="nearest")
        ax.set_title(title, fontsize=8)
    fig.tight_layout()
    _save(fig, path)
