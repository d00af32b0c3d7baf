import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrotrack.channel import NoiseSpec
from hydrotrack.harness import (
    RECEIVER_PATHS,
    SOURCE_MOTIONS,
    THRESHOLDS,
    FilterConfig,
    ReceiverParams,
    ScenarioConfig,
    SourceParams,
    UnknownTrajectoryError,
    convergence_time,
    receiver_trajectory,
    run_batch,
    run_trial,
    scenario,
    summarize,
    source_trajectory,
    trial_seed,
    with_cell,
)

RP = ReceiverParams()
SP = SourceParams()
P0 = np.array([3.0, -4.0, -2.0])


def fd_velocity(f, t, h=1e-4):
    return (f(t + h) - f(t - h)) / (2 * h)


def test_helix_period_changes_only_depth():
    a, _ = receiver_trajectory("helix", RP, 0.0)
    b, _ = receiver_trajectory("helix", RP, RP.period)
    np.testing.assert_allclose(b[:2], a[:2], atol=1e-12)
    assert abs(b[2] - a[2]) == pytest.approx(RP.pitch)


def test_helix_centred_on_anchor():
    anchor = (1.0, 2.0, -3.0)
    ts = np.linspace(0, RP.period, 200, endpoint=False)
    xy = np.array([receiver_trajectory("helix", RP, t, anchor)[0][:2] for t in ts])
    np.testing.assert_allclose(xy.mean(axis=0), anchor[:2], atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(xy - anchor[:2], axis=1), RP.radius)


def test_circle_constant_speed():
    for t in np.linspace(0, 100, 17):
        _, v = receiver_trajectory("circle", RP, t)
        assert np.linalg.norm(v) == pytest.approx(2 * math.pi * RP.radius / RP.period)


def test_square_continuous_at_corners():
    leg = RP.period / 4
    for k in range(1, 8):
        tc = k * leg
        a, _ = receiver_trajectory("square", RP, tc - 1e-9)
        b, _ = receiver_trajectory("square", RP, tc + 1e-9)
        assert np.linalg.norm(a - b) < 1e-8


@pytest.mark.parametrize("kind", RECEIVER_PATHS)
def test_receiver_velocity_is_derivative(kind):
    rng = np.random.default_rng(0)
    checked = 0
    for t in rng.uniform(0, 120, 60):
        def pos(x):
            return receiver_trajectory(kind, RP, x)[0]

        # skip samples straddling a polyline corner
        va, vb = receiver_trajectory(kind, RP, t - 2e-4)[1], receiver_trajectory(kind, RP, t + 2e-4)[1]
        if np.linalg.norm(va - vb) > 1e-3:
            continue
        assert np.max(np.abs(fd_velocity(pos, t) - receiver_trajectory(kind, RP, t)[1])) < 1e-6
        checked += 1
    assert checked > 40


@pytest.mark.parametrize("kind", SOURCE_MOTIONS)
def test_source_velocity_is_derivative(kind):
    rng = np.random.default_rng(1)
    checked = 0
    for t in rng.uniform(0, 120, 60):
        def pos(x):
            return source_trajectory(kind, SP, x, P0, 0.3).p_s

        va, vb = (source_trajectory(kind, SP, t + d, P0, 0.3).v_s for d in (-2e-4, 2e-4))
        if np.linalg.norm(va - vb) > 1e-3:
            continue
        assert np.max(np.abs(fd_velocity(pos, t) - source_trajectory(kind, SP, t, P0, 0.3).v_s)) < 1e-6
        checked += 1
    assert checked > 40


def test_static_source_has_zero_velocity():
    for t in (0.0, 10.0, 119.0):
        s = source_trajectory("static", SP, t, P0)
        assert np.all(s.v_s == 0) and np.all(s.p_s == P0)


def test_cv_source_displacement():
    sp = replace(SP, speed=0.5)
    for t in (0.0, 3.0, 60.0):
        s = source_trajectory("cv", sp, t, P0, 0.0)
        np.testing.assert_allclose(s.p_s - P0, [0.5 * t, 0, 0], atol=1e-12)


def test_turn_constant_speed():
    speeds = [np.linalg.norm(source_trajectory("turn", SP, t, P0, 1.0).v_s) for t in np.linspace(0, 120, 50)]
    assert np.ptp(speeds) < 1e-9


def test_unknown_kinds():
    with pytest.raises(UnknownTrajectoryError):
        receiver_trajectory("zigzag", RP, 0.0)
    with pytest.raises(UnknownTrajectoryError):
        source_trajectory("teleport", SP, 0.0, P0)


def test_convergence_constant_below():
    t = np.arange(50) / 5
    assert convergence_time(t, np.full(50, 0.5), 1.0) == 0.0


def test_convergence_dwell_rejects_transient_dip():
    t = np.arange(8) / 5
    e = [2, 2, 0.8, 1.2, 0.5, 0.4, 0.3, 0.2]
    assert convergence_time(t, e, 1.0, dwell=0.4) == pytest.approx(t[4])


def test_convergence_absent_and_empty():
    t = np.arange(10.0)
    assert convergence_time(t, np.full(10, 2.0), 1.0) is None
    with pytest.raises(ValueError):
        convergence_time([], [], 1.0)


def test_convergence_zero_dwell_is_first_crossing():
    t = np.arange(6.0)
    assert convergence_time(t, [3, 3, 0.5, 3, 3, 3], 1.0, dwell=0.0) == 2.0


def test_convergence_nan_counts_as_above():
    t = np.arange(10.0)
    e = np.r_[np.full(3, np.nan), np.full(7, 0.2)]
    assert convergence_time(t, e, 1.0, dwell=2.0) == 3.0


@settings(max_examples=200)
@given(e=st.lists(st.floats(0, 5), min_size=1, max_size=60), dwell=st.floats(0, 3))
def test_convergence_time_brute_force(e, dwell):
    t = np.arange(len(e)) / 5
    got = convergence_time(t, e, 1.0, dwell)
    expect = None
    for i in range(len(e)):
        if all(e[j] < 1.0 for j in range(len(e)) if t[i] - 1e-12 <= t[j] <= t[i] + dwell + 1e-9):
            expect = t[i]
            break
    assert got == expect


@settings(max_examples=100)
@given(e=st.lists(st.floats(0, 5), min_size=1, max_size=60))
def test_convergence_monotone_in_threshold(e):
    t = np.arange(len(e)) / 5
    found = [convergence_time(t, e, th) is not None for th in THRESHOLDS]
    assert found == sorted(found)


def test_trial_seed_independent_of_batch():
    assert trial_seed(7, 3) == trial_seed(7, 3)
    seeds = {trial_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert trial_seed(7, 0) != trial_seed(8, 0)


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(duration=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig(meas_rate=-5.0)
    with pytest.raises(ValueError):
        ScenarioConfig(init_radius=0.0)
    with pytest.raises(UnknownTrajectoryError):
        ScenarioConfig(source_motion="teleport")


def test_source_start_in_ball_with_keepout():
    cfg = ScenarioConfig()
    for i in range(200):
        _, truth, _ = scenario(replace(cfg, duration=0.2), i)
        p = truth[0].p_s
        assert np.linalg.norm(p) <= cfg.init_radius
        assert np.linalg.norm(p - np.array(cfg.anchor_pose)) > cfg.keepout
        rx0, _ = receiver_trajectory(cfg.receiver_path, cfg.receiver, 0.0, cfg.anchor_pose)
        assert np.linalg.norm(p - rx0) > cfg.keepout


SHORT = ScenarioConfig(duration=30.0)


def test_trial_is_deterministic():
    a = run_trial(SHORT, 11)
    b = run_trial(SHORT, 11)
    for f in ("t", "truth", "estimate", "bias", "error", "gated"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert a.convergence == b.convergence and a.success == b.success


def test_trial_series_invariants():
    r = run_trial(SHORT, 4)
    assert np.all(np.diff(r.t) > 0)
    assert len(r.t) == round(SHORT.duration * SHORT.meas_rate) + 1
    ok = ~np.isnan(r.error)
    assert np.all(r.error[ok] >= 0)


def test_estimates_masked_until_burst_is_in():
    cfg = replace(SHORT, burst_len=20)
    r = run_trial(cfg, 2)
    ready = (cfg.burst_len - 1) / cfg.meas_rate
    assert np.all(np.isnan(r.estimate[r.t < ready - 1e-9]))
    assert np.all(np.isfinite(r.estimate[r.t >= ready - 1e-9]))


def test_naive_estimates_exist_from_the_start():
    r = run_trial(with_cell(SHORT, "static", "naive"), 2)
    assert np.all(np.isfinite(r.estimate))


def test_noiseless_static_end_to_end():
    cfg = replace(ScenarioConfig(), noise=NoiseSpec(0.0, 0.0))
    for seed in range(3):
        r = run_trial(cfg, seed)
        assert r.error[-1] < 0.1


def test_diverged_trial_reports_no_convergence(monkeypatch):
    import hydrotrack.harness as h

    real = h.run_filter

    def broken(*a, **k):
        out = real(*a, **k)
        out.diverged = True
        return out

    monkeypatch.setattr(h, "run_filter", broken)
    r = h.run_trial(SHORT, 1)
    assert r.diverged and r.convergence_time is None and not any(r.success.values())


def test_bank_is_opt_in():
    base = replace(SHORT, duration=25.0)
    off = run_trial(base, 3)
    on = run_trial(replace(base, filter=replace(base.filter, bank_window=10.0)), 3)
    assert np.all(np.isfinite(on.estimate[on.t >= (base.burst_len - 1) / base.meas_rate]))
    assert FilterConfig().bank_window == 0.0
    assert off.init_method == on.init_method == "lc_map"


def test_single_trial_batch_rates_are_binary():
    stats = run_batch(replace(SHORT, duration=10.0, initializer="naive"), 1)
    assert all(v in (0.0, 1.0) for v in stats.cells[0].success_rate.values())


def test_batch_monotone_and_deterministic():
    cfg = replace(SHORT, duration=20.0, initializer="naive")
    a = run_batch(cfg, 6)
    b = run_batch(cfg, 6, workers=2)
    assert a.to_dict() == b.to_dict()
    rates = [a.cells[0].success_rate[th] for th in THRESHOLDS]
    assert rates == sorted(rates) and all(0 <= x <= 1 for x in rates)


def test_summary_means_over_converged_only():
    cfg = replace(SHORT, duration=20.0, initializer="naive")
    rs = [run_trial(cfg, trial_seed(0, i)) for i in range(4)]
    c = summarize(cfg, rs)
    ct = [r.convergence_time for r in rs if r.success[1.0]]
    assert c.n_converged == len(ct)
    assert c.mean_convergence_time == (float(np.mean(ct)) if ct else None)


def test_batch_needs_a_trial():
    with pytest.raises(ValueError):
        run_batch(SHORT, 0)
