import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unimap.attention import AttentionMode
from unimap.denoiser import OracleDenoiser
from unimap.errors import ArgumentError, DimensionError
from unimap.numerics import Rng, randn
from unimap.scheduler import (
    SamplerConfig,
    Trajectory,
    TrajectoryRecord,
    cfg_combine,
    ddim_inversion_step,
    ddim_reverse_step,
    invert,
    make_schedule,
    paired_records,
    predict_clean,
    reconstruct,
)

# scalar alpha_bar tables for the hand-computed examples: t=2 -> 0.5, t=1 -> 0.8
AB = {0: 1.0, 1: 0.8, 2: 0.5}


def constant_model(value):
    def fn(z, t, prompt, mode):
        return np.broadcast_to(np.asarray(value, dtype=np.asarray(z).dtype), np.shape(z)).copy(), []

    return fn


# --- schedule ---------------------------------------------------------------------


def test_schedule_endpoints_and_monotone():
    s = make_schedule()
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert list(s.timesteps[:3]) == [50, 100, 150] and s.timesteps[-1] == 1000
    assert s.reverse_pairs()[0] == (1000, 950) and s.reverse_pairs()[-1] == (50, 0)
    assert s.inversion_pairs()[0] == (0, 50) and s.inversion_pairs()[-1] == (950, 1000)


def test_alpha_bar_matches_product_loop():
    prod = 1.0
    for i in range(1000):
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999)
    assert make_schedule().alpha_bar[1000] == pytest.approx(prod, rel=1e-12)


def test_schedule_rejects_bad_ranges():
    with pytest.raises(ArgumentError):
        make_schedule(ddim_steps=0)
    with pytest.raises(ArgumentError):
        make_schedule(beta_start=0.03, beta_end=0.02)


# --- single steps ------------------------------------------------------------------


def test_predict_clean_hand_value():
    assert predict_clean(1.0, 0.2, 2, AB) == pytest.approx(1.21422, abs=1e-5)
    assert predict_clean(1.0, 0.0, 2, AB) == pytest.approx(1 / math.sqrt(0.5))


def test_predict_clean_rejects_t0():
    with pytest.raises(ArgumentError):
        predict_clean(1.0, 0.2, 0, AB)


def test_predict_clean_inverts_forward_noising():
    s = make_schedule()
    x, eps = randn(Rng(1), (3, 4, 4)).astype(np.float64), randn(Rng(2), (3, 4, 4)).astype(np.float64)
    ab = s.alpha_bar[400]
    z = math.sqrt(ab) * x + math.sqrt(1 - ab) * eps
    np.testing.assert_allclose(predict_clean(z, eps, 400, s), x, atol=1e-12)


def test_reverse_step_hand_value():
    assert ddim_reverse_step(1.0, 0.2, 2, 1, AB) == pytest.approx(1.17547, abs=1e-5)
    assert ddim_reverse_step(1.0, 0.0, 2, 1, AB) == pytest.approx(math.sqrt(0.8 / 0.5))


def test_inversion_step_hand_value():
    assert ddim_inversion_step(1.17547, 0.2, 1, 2, AB) == pytest.approx(1.0, abs=1e-5)
    assert ddim_inversion_step(1.0, 0.0, 1, 2, AB) == pytest.approx(math.sqrt(0.5 / 0.8))


def test_degenerate_step_is_identity():
    assert ddim_reverse_step(0.7, 0.3, 2, 1, {1: 0.6, 2: 0.6}) == pytest.approx(0.7)


def test_steps_reject_nonmonotone_timesteps():
    with pytest.raises(ArgumentError):
        ddim_reverse_step(1.0, 0.2, 1, 2, AB)
    with pytest.raises(ArgumentError):
        ddim_inversion_step(1.0, 0.2, 2, 1, AB)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.02, 0.999), st.floats(0.02, 0.999))
def test_steps_are_mutual_inverses(seed, a, b):
    table = {1: max(a, b), 2: min(a, b)}  # larger alpha_bar = earlier timestep
    r = Rng(seed)
    z, eps = randn(r.split(0), 16), randn(r.split(1), 16)
    back = ddim_inversion_step(ddim_reverse_step(z, eps, 2, 1, table), eps, 1, 2, table)
    np.testing.assert_allclose(back, z, atol=1e-5 * max(1.0, float(np.abs(z).max())))
    fwd = ddim_reverse_step(ddim_inversion_step(z, eps, 1, 2, table), eps, 2, 1, table)
    np.testing.assert_allclose(fwd, z, atol=1e-5 * max(1.0, float(np.abs(z).max())))


def test_cfg_combine_cases():
    c, u = np.array([1.0, 2.0]), np.array([0.5, -1.0])
    np.testing.assert_array_equal(cfg_combine(c, u, 1.0), c)
    np.testing.assert_array_equal(cfg_combine(c, u, 0.0), u)
    np.testing.assert_array_equal(cfg_combine(c, c, 7.5), c)
    np.testing.assert_allclose(cfg_combine(c, u, 3.0), u + 3 * (c - u))
    with pytest.raises(DimensionError):
        cfg_combine(c, np.ones(3), 2.0)


# --- full trajectories ---------------------------------------------------------------


def test_constant_denoiser_round_trip_exact():
    s = make_schedule(ddim_steps=20)
    z0 = randn(Rng(5), (3, 8, 8))
    eps = randn(Rng(6), (3, 8, 8))
    cfg = SamplerConfig(None, AttentionMode.STANDARD)
    inv = invert(z0, constant_model(eps), s, cfg)
    rec = reconstruct(inv.final, constant_model(eps), s, cfg)
    assert np.abs(rec.final - z0).max() < 1e-4


def test_zero_eps_telescopes_to_endpoint():
    s = make_schedule(ddim_steps=20)
    z0 = randn(Rng(7), (2, 4, 4)).astype(np.float64)
    inv = invert(z0, constant_model(0.0), s, SamplerConfig())
    np.testing.assert_allclose(inv.final, math.sqrt(s.alpha_bar[1000]) * z0, rtol=1e-10)


def test_trajectory_records_and_pairing():
    s = make_schedule(ddim_steps=10)
    z0 = randn(Rng(8), (3, 4, 4))
    inv = invert(z0, constant_model(0.1), s, SamplerConfig())
    rec = reconstruct(inv.final, constant_model(0.1), s, SamplerConfig())
    assert len(inv) == len(rec) == 10
    assert inv.timesteps == list(range(0, 1000, 100))
    assert rec.timesteps == list(range(1000, 0, -100))
    pairs = paired_records(inv, rec)
    # inversion step k ends where reconstruction step S-1-k starts
    for ri, rr in pairs:
        assert s.inversion_pairs()[inv.records.index(ri)][1] == rr.t


def test_trajectory_rejects_nonmonotone_append():
    tr = Trajectory("reverse")
    tr.append(TrajectoryRecord(10, np.zeros(1), np.zeros(1), []))
    with pytest.raises(ArgumentError):
        tr.append(TrajectoryRecord(10, np.zeros(1), np.zeros(1), []))


def test_trajectory_dump_load_roundtrip(tmp_path):
    tr = Trajectory("inversion")
    for t in (0, 50):
        tr.append(TrajectoryRecord(t, np.full((2, 2), t, np.float32), np.ones((2, 2), np.float32), [np.full((4, 3), 0.5, np.float32)]))
    tr.final = np.zeros((2, 2), np.float32)
    tr.dump(tmp_path / "traj")
    back = Trajectory.load(tmp_path / "traj")
    assert back.direction == "inversion" and back.timesteps == [0, 50]
    np.testing.assert_array_equal(back.records[1].z_t, tr.records[1].z_t)
    np.testing.assert_array_equal(back.records[0].a_terms[0], tr.records[0].a_terms[0])
    np.testing.assert_array_equal(back.final, tr.final)


def test_batched_trajectory_select_matches_single_runs():
    s = make_schedule(ddim_steps=5)
    pts = [randn(Rng(i), (1, 4, 4)).astype(np.float64) for i in range(3)]
    oracle = OracleDenoiser(pts, s)
    z = np.stack([randn(Rng(10 + i), (1, 4, 4)).astype(np.float64) for i in range(2)])
    batch = invert(z, oracle, s, SamplerConfig())
    for i in range(2):
        single = invert(z[i], oracle, s, SamplerConfig())
        np.testing.assert_allclose(batch.select(i).final, single.final, rtol=1e-12)


# --- oracle denoiser ---------------------------------------------------------------------


def test_oracle_single_point_exact():
    s = make_schedule()
    x = randn(Rng(1), (3, 4, 4)).astype(np.float64)
    z = randn(Rng(2), (3, 4, 4)).astype(np.float64)
    ab = s.alpha_bar[300]
    np.testing.assert_allclose(OracleDenoiser([x], s).eps(z, 300), (z - math.sqrt(ab) * x) / math.sqrt(1 - ab), atol=1e-12)


def test_oracle_two_point_scalar_hand_value():
    # points 0 and 1, alpha_bar 0.5, z 0.5: w1 = 1/(1+exp(-0.25+(0.5-sqrt(.5))^2)) = 0.55159
    oracle = OracleDenoiser([np.array([0.0]), np.array([1.0])], np.array([1.0, 0.5]))
    np.testing.assert_allclose(oracle.weights(np.array([0.5]), 1), [0.44841, 0.55159], atol=1e-5)
    assert oracle.eps(np.array([0.5]), 1)[0] == pytest.approx(0.155514, abs=1e-5)


def test_oracle_small_t_at_data_point_is_near_zero():
    s = make_schedule()
    pts = [randn(Rng(i), (3, 4, 4)).astype(np.float64) for i in range(4)]
    eps = OracleDenoiser(pts, s).eps(pts[2], 1)
    assert np.abs(eps).max() < 0.02


def test_oracle_rejects_empty_dataset():
    with pytest.raises(ArgumentError):
        OracleDenoiser([], make_schedule())


def test_oracle_sampling_lands_near_dataset():
    s = make_schedule(ddim_steps=50)
    pts = [randn(Rng(20 + i), (3, 8, 8)).astype(np.float64) * 0.5 for i in range(5)]
    nearest_pair = min(np.linalg.norm(a - b) for i, a in enumerate(pts) for b in pts[i + 1 :])
    oracle = OracleDenoiser(pts, s)
    for k in range(3):
        z_T = randn(Rng(99, (k,)), (3, 8, 8)).astype(np.float64)
        out = reconstruct(z_T, oracle, s, SamplerConfig()).final
        assert min(np.linalg.norm(out - p) for p in pts) < nearest_pair
