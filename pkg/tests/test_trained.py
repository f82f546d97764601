"""Checks on the committed training run (``artifacts/train``)."""

import csv
import json

import numpy as np
import pytest

from unimap.attention import AttentionMode
from unimap.denoiser import COLORS, SHAPES, Prompt, classify, to_image
from unimap.harness.studies import held_out_samples, recon_report
from unimap.numerics import Rng, randn
from unimap.scheduler import SamplerConfig, make_schedule, reconstruct

pytestmark = pytest.mark.slow


def test_loss_csv_has_one_row_per_step(trained_run):
    with open(trained_run / "loss.csv") as fh:
        rows = list(csv.reader(fh))
    steps = json.loads((trained_run / "config.json").read_text())["train"]["steps"]
    assert rows[0] == ["step", "loss"] and len(rows) - 1 == steps
    assert [int(r[0]) for r in rows[1:]] == list(range(steps))


def test_loss_block_means_decrease_over_first_2000_steps(trained_run):
    with open(trained_run / "loss.csv") as fh:
        losses = np.array([float(r["loss"]) for r in csv.DictReader(fh)])
    blocks = losses[:2000].reshape(10, 200).mean(axis=1)
    assert np.all(np.diff(blocks) < 0), blocks


def test_conditional_samples_are_classified_correctly(trained_model):
    prompts = [Prompt.of(c, s) for c in COLORS for s in SHAPES] * 4
    z_T = randn(Rng(11, (0x5A,)), (len(prompts), 3, 32, 32))
    out = reconstruct(z_T, trained_model, make_schedule(ddim_steps=20), SamplerConfig(prompts, AttentionMode.STANDARD)).final
    hits = [classify(to_image(o)) == (p.color, p.shape) for o, p in zip(out, prompts)]
    assert np.mean(hits) >= 0.8, np.mean(hits)


def test_trained_reconstruction_mse_is_finite(trained_model):
    rep = recon_report(trained_model, held_out_samples(21, 8), ["source", "uniform-null", "zero"], make_schedule(ddim_steps=20))
    assert all(np.isfinite(r.mse) and r.mse < 0.1 for r in rep.rows)
