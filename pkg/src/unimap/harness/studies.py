"""Study commands: training, reconstruction, correlation and editing runs.

Every command writes into a fresh run directory that holds the resolved
``config.json`` next to its CSV output and figures. Study functions that
take a model (``recon_report``, ``correlation_pairs``, ``edit_grid``) are
usable without touching the filesystem.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..attention import AttentionMode
from ..denoiser import (
    COLORS,
    SHAPES,
    DenoiserModel,
    ModelConfig,
    Prompt,
    TrainConfig,
    classify,
    generate_samples,
    load_checkpoint,
    save_checkpoint,
    to_image,
    to_latent,
    train,
)
from ..editing import EditConfig, edit, invert_branches
from ..errors import ArgumentError
from ..metrics import ReconReport, ReconRow, attention_discrepancy, clean_discrepancy, mse, pearson, psnr, ssim
from ..numerics.rng import Rng
from ..scheduler import SamplerConfig, invert, make_schedule, reconstruct
from . import render
from .config import REGIMES, StudyConfig

log = logging.getLogger(__name__)

HELD_OUT_STREAM = 0x7E57  # keeps evaluation images disjoint from the training pool
CAPTURE_NOTE = (
    "A terms are captured after the output projection; inversion step k (eps at t_k) "
    "is paired with reconstruction step S-1-k (eps at t_(k+1))"
)


# --- plumbing ---------------------------------------------------------------


def prepare_run_dir(out) -> Path:
    """Create ``out``; refuse to write into a directory that already has files."""
    path = Path(out)
    if path.exists():
        if not path.is_dir():
            raise ArgumentError(f"output path {path} exists and is not a directory")
        if any(path.iterdir()):
            raise ArgumentError(f"run directory {path} is not empty; runs are append-only, pick a new --out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_snapshot(run_dir: Path, cfg: StudyConfig) -> None:
    (run_dir / "config.json").write_text(cfg.to_json(), encoding="utf-8")


def schedule_for(cfg: StudyConfig, ddim_steps: int | None = None):
    s = cfg.schedule
    return make_schedule(s.T, s.beta_start, s.beta_end, ddim_steps or s.ddim_steps)


def held_out_samples(seed: int, count: int, size: int = 32):
    return generate_samples(Rng(seed, (HELD_OUT_STREAM,)), count, size)


def require_checkpoint(cfg: StudyConfig) -> DenoiserModel:
    if not cfg.checkpoint:
        raise FileNotFoundError("no checkpoint given (set 'checkpoint' in the config or pass --checkpoint)")
    if not (Path(cfg.checkpoint) / "manifest.txt").is_file():
        raise FileNotFoundError(f"checkpoint not found: {cfg.checkpoint}")
    return load_checkpoint(cfg.checkpoint)


def mismatched(p: Prompt) -> Prompt:
    """Shift both color and shape by one so the prompt contradicts the image."""
    return Prompt.of(COLORS[(COLORS.index(p.color) + 1) % 3], SHAPES[(SHAPES.index(p.shape) + 1) % 3])


def regime_prompts(regime: str, sources: list) -> list:
    kind = REGIMES[regime][1]
    if kind == "null":
        return [Prompt.null()] * len(sources)
    if kind == "mismatch":
        return [mismatched(p) for p in sources]
    return list(sources)


def _chunks(n: int, size: int):
    return [(s, min(n, s + size)) for s in range(0, n, size)]


# worker-process state: each worker loads the immutable checkpoint once
_WORKER = {}


def _worker_init(ckpt: str):
    _WORKER["model"] = load_checkpoint(ckpt)


def _map_chunks(fn, jobs: list, cfg: StudyConfig, model):
    """Run ``fn(model, job)`` over jobs, in-process or over a worker pool.

    Chunk boundaries depend only on the config, so results do not depend on
    the worker count.
    """
    if cfg.workers <= 1 or len(jobs) <= 1 or not cfg.checkpoint:
        return [fn(model, job) for job in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_worker_init, initargs=(cfg.checkpoint,)) as pool:
        return list(pool.map(_call_in_worker, [(fn, job) for job in jobs]))


def _call_in_worker(arg):
    fn, job = arg
    return fn(_WORKER["model"], job)


# --- training -----------------------------------------------------------------


def cmd_train(cfg: StudyConfig) -> Path:
    """Train a denoiser; writes ``checkpoint/``, ``loss.csv`` and ``loss.png``.

    With ``train.checkpoint_every`` set, intermediate weights also land in
    ``snapshots/step<N>/``.
    """
    run = prepare_run_dir(cfg.out)
    write_snapshot(run, cfg)
    tp = cfg.train
    mcfg = ModelConfig(widths=tuple(tp.widths), d_c=tp.d_c, d=tp.d, t_dim=tp.t_dim, heads=tp.heads, T=cfg.schedule.T)
    model = DenoiserModel.init(mcfg, seed=cfg.seed)
    sched = schedule_for(cfg)
    tc = TrainConfig(
        steps=tp.steps,
        batch_size=tp.batch_size,
        lr=tp.lr,
        warmup=tp.warmup,
        grad_clip=tp.grad_clip,
        null_prob=tp.null_prob,
        ema_decay=tp.ema_decay,
        pool_size=tp.pool_size,
        lr_schedule=tp.lr_schedule,
    )

    loss_fh = open(run / "loss.csv", "w", encoding="utf-8", newline="")
    writer = csv.writer(loss_fh, lineterminator="\n")
    writer.writerow(["step", "loss"])

    def on_step(step, value):
        writer.writerow([step, repr(value)])
        if step % 100 == 0:
            loss_fh.flush()
            log.info("step %d loss %.5f", step, value)

    def on_snapshot(done, weights):
        save_checkpoint(DenoiserModel(mcfg, dict(weights)), run / "snapshots" / f"step{done:06d}", sched)

    try:
        losses = train(model, None, sched, tp.steps, Rng(cfg.seed, (0x7A1,)), tc, on_step, tp.checkpoint_every, on_snapshot)
    finally:
        loss_fh.close()
    save_checkpoint(model, run / "checkpoint", sched)
    _plot_loss(losses, run / "loss.png")
    return run / "checkpoint"


def _plot_loss(losses, path):
    plt = render._pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(losses)), losses, lw=0.5, color="#bbbbbb")
    if len(losses) >= 50:
        k = 50
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax.plot(np.arange(k - 1, len(losses)), smooth, color="#4c72b0")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    fig.tight_layout()
    render._save(fig, path)


# --- reconstruction -------------------------------------------------------------


def _recon_chunk(model, job):
    images, prompts, ids, regimes, sched, guidance = job
    z0 = to_latent(np.stack(images))
    rows = []
    for regime in regimes:
        mode, _ = REGIMES[regime]
        sc = SamplerConfig(regime_prompts(regime, prompts), mode, guidance, Prompt.null())
        inv = invert(z0, model, sched, sc)
        rec = reconstruct(inv.final, model, sched, sc)
        out = to_image(rec.final)
        for k, image_id in enumerate(ids):
            rows.append(
                ReconRow(
                    image_id,
                    mode.value,
                    regime,
                    mse(images[k], out[k]),
                    psnr(images[k], out[k]),
                    ssim(images[k], out[k]),
                    attention_discrepancy(inv.select(k), rec.select(k)),
                )
            )
    return rows


def recon_report(model, samples, regimes, sched, guidance: float = 1.0, batch: int = 32, cfg: StudyConfig | None = None) -> ReconReport:
    """Invert and reconstruct every sample under every regime.

    Rows are ordered by image then by regime (in the order given).
    """
    for r in regimes:
        if r not in REGIMES:
            raise ArgumentError(f"unknown prompt regime {r!r}")
    jobs = [
        ([s.image for s in samples[a:b]], [s.prompt for s in samples[a:b]], list(range(a, b)), list(regimes), sched, guidance)
        for a, b in _chunks(len(samples), batch)
    ]
    cfg = cfg or StudyConfig(workers=1)
    rows = [row for chunk in _map_chunks(_recon_chunk, jobs, cfg, model) for row in chunk]
    order = {r: i for i, r in enumerate(regimes)}
    rows.sort(key=lambda row: (row.image_id, order[row.prompt_regime]))
    report = ReconReport(rows=rows)
    report.metadata = {"steps": sched.ddim_steps, "guidance": guidance, "images": len(samples)}
    return report


def cmd_recon_study(cfg: StudyConfig) -> ReconReport:
    """Writes ``recon.csv``, ``summary.txt``, ``recon.png`` and a heatmap panel."""
    model = require_checkpoint(cfg)
    run = prepare_run_dir(cfg.out)
    write_snapshot(run, cfg)
    sched = schedule_for(cfg)
    samples = held_out_samples(cfg.seed, cfg.images, model.cfg.image_size)
    regimes = cfg.active_regimes()
    if not regimes:
        raise ArgumentError(f"no prompt regime uses the selected modes {cfg.modes}")
    report = recon_report(model, samples, regimes, sched, cfg.guidance, cfg.batch, cfg)
    report.metadata["seed"] = cfg.seed
    report.write_csv(run / "recon.csv")
    meta = " ".join(f"{k}={v}" for k, v in sorted(report.metadata.items()))
    summary = "\n".join([f"# {meta}", f"# {CAPTURE_NOTE}", report.summary_table()])
    (run / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    render.plot_recon_bars(report.aggregates(), run / "recon.png")
    _dump_heatmaps(model, samples[0], regimes, sched, cfg.guidance, run / "heatmaps")
    return report


def _dump_heatmaps(model, sample, regimes, sched, guidance, out: Path):
    """Reconstruction-trajectory update-term heatmaps for one image, per regime."""
    out.mkdir()
    z0 = to_latent(sample.image)
    for regime in regimes:
        mode, _ = REGIMES[regime]
        if mode is AttentionMode.ZERO:
            continue
        sc = SamplerConfig(regime_prompts(regime, [sample.prompt])[0], mode, guidance, Prompt.null())
        rec = reconstruct(invert(z0, model, sched, sc).final, model, sched, sc)
        maps, titles = [], []
        for i, r in enumerate(rec.records):
            if not r.a_terms:
                break
            render.render_heatmap(r.a_terms[0], out / f"{regime}_step{i:02d}_t{r.t:04d}.ppm", scale=4)
            maps.append(r.a_terms[0])
            titles.append(f"t={r.t}")
        if maps:
            pick = np.linspace(0, len(maps) - 1, min(10, len(maps))).round().astype(int)
            render.plot_heatmap_panels([maps[i] for i in pick], [titles[i] for i in pick], out / f"{regime}.png")


# --- correlation ------------------------------------------------------------------


def _corr_chunk(model, job):
    images, prompts, regime, sched, guidance = job
    mode, _ = REGIMES[regime]
    sc = SamplerConfig(regime_prompts(regime, prompts), mode, guidance, Prompt.null())
    inv = invert(to_latent(np.stack(images)), model, sched, sc)
    rec = reconstruct(inv.final, model, sched, sc)
    out = []
    for k in range(len(images)):
        ti, tr = inv.select(k), rec.select(k)
        out.append((attention_discrepancy(ti, tr), clean_discrepancy(ti, tr)))
    return out


def correlation_pairs(model, samples, sched, regime: str = "source", guidance: float = 1.0, batch: int = 32, cfg=None) -> list:
    """Per image ``(attention discrepancy, summed clean-prediction discrepancy)``."""
    if len(samples) < 2:
        raise ArgumentError(f"correlation needs at least 2 images, got {len(samples)}")
    jobs = [
        ([s.image for s in samples[a:b]], [s.prompt for s in samples[a:b]], regime, sched, guidance)
        for a, b in _chunks(len(samples), batch)
    ]
    cfg = cfg or StudyConfig(workers=1)
    return [p for chunk in _map_chunks(_corr_chunk, jobs, cfg, model) for p in chunk]


def correlation_study(model, samples, sched, regime: str = "source", guidance: float = 1.0, batch: int = 32, cfg=None):
    """Returns ``(pairs, r)``; zero-variance data raises the undefined-correlation error."""
    pairs = correlation_pairs(model, samples, sched, regime, guidance, batch, cfg)
    r = pearson([p[0] for p in pairs], [p[1] for p in pairs])
    return pairs, r


def cmd_corr_study(cfg: StudyConfig):
    """Writes ``corr.csv`` (image_id, attn_mse, z0_mse), ``corr.txt`` and ``corr.png``."""
    model = require_checkpoint(cfg)
    if cfg.images < 2:
        raise ArgumentError(f"correlation needs at least 2 images, got {cfg.images}")
    run = prepare_run_dir(cfg.out)
    write_snapshot(run, cfg)
    sched = schedule_for(cfg)
    samples = held_out_samples(cfg.seed, cfg.images, model.cfg.image_size)
    pairs = correlation_pairs(model, samples, sched, cfg.corr_regime, cfg.guidance, cfg.batch, cfg)
    with open(run / "corr.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "attn_mse", "z0_mse"])
        for i, (a, z) in enumerate(pairs):
            w.writerow([i, repr(a), repr(z)])
    xs, ys = [p[0] for p in pairs], [p[1] for p in pairs]
    r = pearson(xs, ys)
    (run / "corr.txt").write_text(
        f"r {r!r}\nn {len(pairs)}\nregime {cfg.corr_regime}\nguidance {cfg.guidance!r}\nsteps {sched.ddim_steps}\n# {CAPTURE_NOTE}\n",
        encoding="utf-8",
    )
    render.plot_correlation(xs, ys, r, run / "corr.png")
    return pairs, r


# --- editing ------------------------------------------------------------------------


def color_edit_target(p: Prompt) -> Prompt:
    """Recolor the shape: red -> green -> blue -> red."""
    return Prompt.of(COLORS[(COLORS.index(p.color) + 1) % 3], p.shape)


def background_mse(original, edited, coverage) -> float:
    """MSE over pixels the shape does not touch at all."""
    bg = np.asarray(coverage) == 0
    if not bg.any():
        return math.nan
    diff = np.asarray(edited, dtype=np.float64) - np.asarray(original, dtype=np.float64)
    return float(np.mean((diff * diff)[:, bg]))


def _edit_metrics(samples, targets, outputs) -> dict:
    bg, whole, ok = [], [], 0
    for s, tgt, out in zip(samples, targets, outputs):
        bg.append(background_mse(s.image, out, s.coverage))
        whole.append(mse(s.image, out))
        ok += classify(out) == (tgt.color, tgt.shape)
    bg = [v for v in bg if not math.isnan(v)]
    return {
        "bg_mse": float(np.mean(bg)) if bg else math.nan,
        "mse": float(np.mean(whole)),
        "psnr_db": float(np.mean([psnr(s.image, o) for s, o in zip(samples, outputs)])),
        "ssim": float(np.mean([ssim(s.image, o) for s, o in zip(samples, outputs)])),
        "target_success": ok / len(samples),
    }


def edit_grid(model, samples, sched, quantiles, t_masks, kernel: int = 3, guidance: float = 1.0, batch: int = 32, keep_masks: int = 0):
    """Edit every sample (recolor) over the ``quantile x t_mask`` grid.

    Returns ``(rows, outputs, masks)``: one metrics dict per grid point plus a
    no-mask baseline row (``quantile = -1``, plain target-prompt
    reconstruction from the source inversion); ``outputs[(q, t_mask)]`` holds
    the edited images and ``masks[(q, t_mask)]`` the per-step masks of the
    first ``keep_masks`` images.
    """
    targets = [color_edit_target(s.prompt) for s in samples]
    grid = [(float(q), int(tm)) for q in quantiles for tm in t_masks]
    outputs = {key: [] for key in grid + [(-1.0, -1)]}
    masks = {key: [] for key in grid}
    for a, b in _chunks(len(samples), batch):
        z0 = to_latent(np.stack([s.image for s in samples[a:b]]))
        src = [s.prompt for s in samples[a:b]]
        tgt = targets[a:b]
        base_cfg = EditConfig(src, tgt, 0.5, 0, kernel, guidance, sched.T)
        inverted = invert_branches(z0, base_cfg, model, sched)
        sc = SamplerConfig(tgt, AttentionMode.STANDARD, guidance, Prompt.null())
        outputs[(-1.0, -1)].extend(to_image(reconstruct(inverted[1], model, sched, sc).final))
        for q, tm in grid:
            res = edit(z0, EditConfig(src, tgt, q, tm, kernel, guidance, sched.T), model, sched, inverted=inverted)
            outputs[(q, tm)].extend(to_image(res.output))
            for k in range(max(0, min(keep_masks - a, b - a))):
                masks[(q, tm)].append([m[k] for m in res.masks])
    rows = []
    for (q, tm), outs in outputs.items():
        row = {"quantile": q, "t_mask": tm}
        row.update(_edit_metrics(samples, targets, outs))
        rows.append(row)
    return rows, outputs, masks


EDIT_COLUMNS = ("quantile", "t_mask", "bg_mse", "mse", "psnr_db", "ssim", "target_success")


def cmd_edit(cfg: StudyConfig):
    """Writes the ablation CSV, edited PPMs and per-step mask PPMs.

    Layout::

        config.json  ablation.csv  ablation.png
        originals/<id>.ppm
        edits/q<q>_tmask<t>/<id>.ppm      (baseline: edits/nomask/)
        masks/q<q>_tmask<t>/<id>/step<k>_t<t>.ppm
    """
    model = require_checkpoint(cfg)
    run = prepare_run_dir(cfg.out)
    write_snapshot(run, cfg)
    ep = cfg.edit
    sched = schedule_for(cfg, ep.ddim_steps)
    samples = held_out_samples(cfg.seed, cfg.images, model.cfg.image_size)
    rows, outputs, masks = edit_grid(
        model, samples, sched, ep.quantiles, ep.t_masks, ep.kernel, ep.guidance, cfg.batch, ep.mask_dump_images
    )
    with open(run / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDIT_COLUMNS)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in EDIT_COLUMNS])
    render.plot_edit_ablation(rows, run / "ablation.png")

    (run / "originals").mkdir()
    for i, s in enumerate(samples):
        render.write_ppm(run / "originals" / f"{i:04d}.ppm", s.image)
    rev = list(sched.reverse_pairs())
    for (q, tm), outs in outputs.items():
        name = "nomask" if q < 0 else f"q{q:g}_tmask{tm}"
        d = run / "edits" / name
        d.mkdir(parents=True)
        for i, img in enumerate(outs):
            render.write_ppm(d / f"{i:04d}.ppm", img)
        for i, seq in enumerate(masks.get((q, tm), [])):
            md = run / "masks" / name / f"{i:04d}"
            md.mkdir(parents=True)
            for k, m in enumerate(seq):
                render.write_ppm(md / f"step{k:02d}_t{rev[k][0]:04d}.ppm", render.mask_image(m, scale=4))
    return rows
