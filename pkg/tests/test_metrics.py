import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unimap.errors import ArgumentError, DimensionError, UndefinedCorrelationError
from unimap.metrics import (
    SSIM_C1,
    ReconReport,
    ReconRow,
    attention_discrepancy,
    clean_discrepancy,
    mse,
    pearson,
    psnr,
    psnr_from_mse,
    ssim,
)
from unimap.scheduler import Trajectory, TrajectoryRecord

unit = st.floats(0, 1, allow_nan=False)
images = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(7, 10), st.integers(7, 10)), elements=unit)


def test_mse_cases():
    a = np.random.default_rng(0).random((3, 4, 5))
    assert mse(a, a) == 0.0
    assert mse(np.zeros((2, 2)), np.ones((2, 2))) == 1.0
    b = np.random.default_rng(1).random((3, 4, 5))
    total = 0.0
    for idx in np.ndindex(a.shape):
        total += (a[idx] - b[idx]) ** 2
    assert mse(a, b) == pytest.approx(total / a.size, abs=1e-7)
    with pytest.raises(DimensionError):
        mse(a, b[:2])


@settings(max_examples=200, deadline=None)
@given(arrays(np.int64, (4, 4), elements=st.integers(0, 255)), arrays(np.int64, (4, 4), elements=st.integers(0, 255)))
def test_mse_nonnegative_zero_iff_equal(a, b):
    a, b = a / 255.0, b / 255.0  # 8-bit levels keep squared gaps out of the underflow range
    v = mse(a, b)
    assert v >= 0
    assert (v == 0) == bool(np.array_equal(a, b))


def test_psnr_values():
    assert abs(psnr_from_mse(0.01) - 20.0) < 1e-9
    a = np.full((3, 8, 8), 0.5)
    assert psnr(a, a) == math.inf
    b = a + 0.1
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ArgumentError):
        psnr(a, a + 0.6)


def test_psnr_strictly_decreasing():
    vals = [psnr_from_mse(e) for e in (1e-4, 1e-3, 1e-2, 0.5)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_ssim_identity_and_constant_closed_form():
    a = np.random.default_rng(2).random((3, 12, 12))
    assert ssim(a, a) == 1.0
    got = ssim(np.zeros((8, 8)), np.ones((8, 8)))
    assert abs(got - SSIM_C1 / (1 + SSIM_C1)) < 1e-7
    assert got == pytest.approx(9.999e-5, rel=1e-4)


def test_ssim_rejects_small_images():
    with pytest.raises(ArgumentError):
        ssim(np.zeros((6, 6)), np.zeros((6, 6)))


@settings(max_examples=100, deadline=None)
@given(images, st.integers(0, 2**31))
def test_ssim_symmetric_and_bounded(a, seed):
    b = np.random.default_rng(seed).random(a.shape)
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= s <= 1.0
    assert ssim(a, a) == 1.0


def test_ssim_matches_direct_window_loop():
    rng = np.random.default_rng(4)
    a, b = rng.random((9, 10)), rng.random((9, 10))
    vals = []
    for i in range(9 - 6):
        for j in range(10 - 6):
            wa, wb = a[i : i + 7, j : j + 7], b[i : i + 7, j : j + 7]
            ma, mb = wa.mean(), wb.mean()
            va, vb = ((wa - ma) ** 2).mean(), ((wb - mb) ** 2).mean()
            cov = ((wa - ma) * (wb - mb)).mean()
            vals.append((2 * ma * mb + 1e-4) * (2 * cov + 9e-4) / ((ma**2 + mb**2 + 1e-4) * (va + vb + 9e-4)))
    assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-10)


# --- discrepancies -----------------------------------------------------------------------


def traj(direction, ts, a_terms, z0s=None):
    tr = Trajectory(direction)
    for k, t in enumerate(ts):
        z0 = z0s[k] if z0s is not None else np.zeros(2)
        tr.append(TrajectoryRecord(t, np.zeros(2), z0, a_terms[k]))
    return tr


def test_attention_discrepancy_trivial_cases():
    a = [[np.ones((4, 3))]]
    assert attention_discrepancy(traj("inversion", [0], a), traj("reverse", [50], a)) == 0.0
    b = [[np.ones((4, 3)) + 0.1]]
    assert attention_discrepancy(traj("inversion", [0], a), traj("reverse", [50], b)) == pytest.approx(0.01)


def test_attention_discrepancy_matches_naive_pairing():
    rng = np.random.default_rng(5)
    S, L = 4, 2
    inv_terms = [[rng.random((6, 3)), rng.random((3, 5))] for _ in range(S)]
    rec_terms = [[rng.random((6, 3)), rng.random((3, 5))] for _ in range(S)]
    ti = traj("inversion", [0, 10, 20, 30], inv_terms)
    tr = traj("reverse", [40, 30, 20, 10], rec_terms)
    expect = 0.0
    for k in range(S):
        for layer in range(L):
            d = inv_terms[k][layer] - rec_terms[S - 1 - k][layer]
            expect += float(np.mean(d * d))
    assert attention_discrepancy(ti, tr) == pytest.approx(expect, abs=1e-6)


def test_discrepancy_rejects_mismatched_trajectories():
    a = [[np.ones((4, 3))], [np.ones((4, 3))]]
    with pytest.raises(ArgumentError):
        attention_discrepancy(traj("inversion", [0, 1], a), traj("reverse", [5], a[:1]))
    with pytest.raises(ArgumentError):
        attention_discrepancy(traj("inversion", [0], [[np.ones((4, 3))]]), traj("reverse", [5], [[]]))


def test_clean_discrepancy_sum():
    ti = traj("inversion", [0, 1], [[], []], [np.zeros(2), np.ones(2)])
    tr = traj("reverse", [2, 1], [[], []], [np.ones(2) * 3, np.ones(2)])
    # pairs: inv0 with rec1 (0 vs 1), inv1 with rec0 (1 vs 3)
    assert clean_discrepancy(ti, tr) == pytest.approx(1.0 + 4.0)


# --- correlation --------------------------------------------------------------------------


def test_pearson_trivial_cases():
    xs = [0.0, 1.0, 2.0, 5.0]
    assert pearson(xs, [2 * x + 1 for x in xs]) == pytest.approx(1.0)
    assert pearson(xs, [-x for x in xs]) == pytest.approx(-1.0)


def test_pearson_five_point_hand_value():
    # x = 1..5, y = 2,4,5,4,5: sxy = 6, sxx = 10, syy = 6 -> r = 6 / sqrt(60)
    assert pearson([1, 2, 3, 4, 5], [2, 4, 5, 4, 5]) == pytest.approx(6 / math.sqrt(60), abs=1e-9)


def test_pearson_errors():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ArgumentError):
        pearson([1], [2])
    with pytest.raises(ArgumentError):
        pearson([1, 2], [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=3, max_size=20),
    st.floats(0.1, 10),
    st.floats(-10, 10),
    st.integers(0, 2**31),
)
def test_pearson_affine_invariance(xs, scale, shift, seed):
    ys = list(np.random.default_rng(seed).normal(size=len(xs)))
    try:
        r = pearson(xs, ys)
    except UndefinedCorrelationError:
        return
    if np.std(xs) < 1e-6:
        return
    assert pearson([scale * x + shift for x in xs], ys) == pytest.approx(r, abs=1e-6)


# --- reports ---------------------------------------------------------------------------


def sample_report():
    rep = ReconReport()
    rng = np.random.default_rng(6)
    for i in range(5):
        for regime in ("null", "source"):
            m = float(rng.random() * 0.01)
            rep.add(ReconRow(i, "standard", regime, m, psnr_from_mse(m), float(rng.random()), float(rng.random())))
    rep.add(ReconRow(5, "zero", "zero", 0.0, math.inf, 1.0, 0.0))
    return rep


def test_report_aggregates_recompute():
    rep = sample_report()
    agg = rep.aggregates()
    for regime in ("null", "source"):
        col = [r.mse for r in rep.rows if r.prompt_regime == regime]
        assert agg[regime]["mse"] == (pytest.approx(np.mean(col)), pytest.approx(np.std(col)))


def test_report_csv_roundtrip(tmp_path):
    rep = sample_report()
    text = rep.to_csv()
    assert text.splitlines()[0] == "image_id,mode,prompt_regime,mse,psnr_db,ssim,attn_discrepancy"
    assert ",inf," in text
    rep.write_csv(tmp_path / "r.csv")
    back = ReconReport.read_csv(tmp_path / "r.csv")
    assert back.rows == rep.rows
    assert "regime" in rep.summary_table()
