import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrotrack.channel import MeasurementFrame, NoiseSpec, simulate_measurement
from hydrotrack.geometry import ReceiverPair, SourceKinematics, predict_measurement, rd_rrd
from hydrotrack.initializers import (
    Bounds,
    Burst,
    EmptyLocusError,
    InfeasibleBoundsError,
    LcMapConfig,
    PriorSpec,
    init_lcmap,
    init_naive,
    init_random_sphere,
    init_tdoa_ls,
    lcmap_cost,
    lcmap_fim,
    sample_tdoa_locus,
    state_from_kinematics,
)
from hydrotrack.motion import Model, kinematics
from hydrotrack.ukf import MeasurementNoise

ANCHOR = np.array([0.0, 0.0, -0.96])
RM = MeasurementNoise()
SMALL = LcMapConfig(M_pos=128, M_vel=8)


def helix(t):
    w = 2 * math.pi / 60
    return ANCHOR + np.array([4 * math.cos(w * t), 4 * math.sin(w * t), -0.3 - 0.01 * t]), np.array(
        [-4 * w * math.sin(w * t), 4 * w * math.cos(w * t), -0.01]
    )


def make_burst(p_s, v_s=(0, 0, 0), K=10, noise=NoiseSpec(0, 0), seed=0, rate=5.0):
    rng = np.random.default_rng(seed)
    frames = []
    for k in range(K):
        t = k / rate
        p_m, v_m = helix(t)
        src = SourceKinematics(np.asarray(p_s) + np.asarray(v_s) * t, v_s)
        frames.append(simulate_measurement(src, ReceiverPair(ANCHOR, p_m, v_m), noise, rng, t))
    return Burst(frames)


def random_source(rng, radius=15.0):
    while True:
        p = rng.uniform(-radius, radius, 3)
        p[2] = -abs(p[2]) - 0.5
        if min(np.linalg.norm(p - ANCHOR), np.linalg.norm(p - helix(0)[0])) > 1.5:
            return p


def test_burst_invariants():
    with pytest.raises(ValueError):
        Burst([])
    b = make_burst((5, 5, -3), K=3)
    with pytest.raises(ValueError):
        Burst(b.frames[::-1])
    assert b.K == 3


def test_bounds_invariants():
    with pytest.raises(InfeasibleBoundsError):
        Bounds(radius=0.0)
    with pytest.raises(InfeasibleBoundsError):
        Bounds(z_min=0.0, z_max=-1.0)
    with pytest.raises(ValueError):
        LcMapConfig(M_pos=0)


def test_naive_midpoint():
    rx = ReceiverPair((0, 0, -0.96), (4, 0, -1.19))
    s = init_naive(rx).state
    np.testing.assert_allclose(s.mean[:3], [2, 0, -1.075])
    assert np.all(s.mean[3:] == 0.0)


def test_naive_symmetric_origin():
    rx = ReceiverPair((1, -2, 3), (-1, 2, -3))
    np.testing.assert_array_equal(init_naive(rx).state.mean[:3], np.zeros(3))


def test_naive_default_covariance():
    s = init_naive(ReceiverPair((0, 0, 0), (1, 0, 0)), Model.CV, PriorSpec()).state
    np.testing.assert_allclose(np.diag(s.cov)[:6], [100] * 3 + [1] * 3)


@pytest.mark.parametrize("model", list(Model))
def test_state_from_kinematics_layouts(model):
    v = np.array([0.6, -0.8, 0.1])
    s = state_from_kinematics(model, np.array([1.0, 2, -3]), v)
    p, vv = kinematics(s.mean, model)
    np.testing.assert_allclose(p, [1, 2, -3])
    np.testing.assert_allclose(vv, np.zeros(3) if model is Model.STATIC else v, atol=1e-12)
    np.linalg.cholesky(s.cov)


def test_ctrv_covariance_mapped_through_jacobian():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 6))
    P_pv = A @ A.T * 0.1 + np.diag([1, 1, 1, 0.01, 0.01, 0.01])
    v = np.array([1.0, 0.5, 0.0])
    s = state_from_kinematics(Model.CTRV, np.zeros(3), v, P_pv)
    np.linalg.cholesky(s.cov)
    # first-order check: speed variance equals u^T Pv u along the heading
    u = v[:2] / np.linalg.norm(v[:2])
    assert s.cov[3, 3] == pytest.approx(u @ P_pv[3:5, 3:5] @ u, rel=1e-12)


def test_random_sphere_noiseless_residual():
    b = make_burst((6, -4, -3))
    ini = init_random_sphere(b, LcMapConfig(), np.random.default_rng(1))
    f0 = b.frames[0]
    rd, _ = rd_rrd(ini.state.mean[:3], np.zeros(3), f0.rx.p_f, f0.rx.p_m, f0.rx.v_m)
    assert abs(rd - f0.rd) < 0.5
    assert np.all(ini.state.mean[3:6] == 0)


def test_random_sphere_deterministic():
    b = make_burst((6, -4, -3))
    a = init_random_sphere(b, LcMapConfig(), np.random.default_rng(9)).state.mean
    c = init_random_sphere(b, LcMapConfig(), np.random.default_rng(9)).state.mean
    np.testing.assert_array_equal(a, c)


def test_random_sphere_within_radius_100_bursts():
    rng = np.random.default_rng(2)
    cfg = LcMapConfig(bounds=Bounds(radius=20.0))
    for i in range(100):
        b = make_burst(random_source(rng), K=1, seed=i, noise=NoiseSpec())
        p = init_random_sphere(b, cfg, rng).state.mean[:3]
        assert np.linalg.norm(p - b.frames[0].rx.midpoint) <= 20.0 + 1e-9


def test_tdoa_ls_start_on_locus_does_not_move():
    rx = ReceiverPair((0, 0, -1), (4, 0, -1))
    b = Burst([MeasurementFrame(0.0, 0.0, 0.0, rx)])
    ini = init_tdoa_ls(b)
    np.testing.assert_allclose(ini.state.mean[:3], rx.midpoint, atol=1e-12)
    assert ini.converged


def test_tdoa_ls_noiseless_residual():
    rng = np.random.default_rng(3)
    for _ in range(20):
        b = make_burst(random_source(rng), K=1)
        ini = init_tdoa_ls(b)
        f0 = b.frames[0]
        rd, _ = rd_rrd(ini.state.mean[:3], np.zeros(3), f0.rx.p_f, f0.rx.p_m, f0.rx.v_m)
        assert abs(rd - f0.rd) < 1e-2


def test_tdoa_ls_zero_rd_on_bisector():
    rx = ReceiverPair((-2, 0, -1), (2, 0, -1))
    b = Burst([MeasurementFrame(0.0, 0.0, 0.0, rx)])
    p = init_tdoa_ls(b).state.mean[:3]
    assert abs(np.linalg.norm(p - rx.p_m) - np.linalg.norm(p - rx.p_f)) < 1e-2


def test_tdoa_ls_reports_iteration_cap():
    rx = ReceiverPair((0, 0, -1), (4, 0, -1))
    b = Burst([MeasurementFrame(0.0, 3.9, 0.0, rx)])
    ini = init_tdoa_ls(b, max_iter=1)
    assert ini.iterations == 1 and not ini.converged


def test_locus_rd_zero_is_bisector_plane():
    rx = ReceiverPair((0, 0, -0.96), (4, 1, -1.2))
    pts = sample_tdoa_locus(0.0, rx, 256, Bounds(), np.random.default_rng(0))
    u = (rx.p_m - rx.p_f) / rx.baseline
    assert np.max(np.abs((pts - rx.midpoint) @ u)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(frac=st.floats(-0.999, 0.999), seed=st.integers(0, 2**31), extra=st.floats(1, 40))
def test_locus_constraint_and_bounds(frac, seed, extra):
    rng = np.random.default_rng(seed)
    p_m = ANCHOR + rng.uniform(-5, 5, 3)
    rx = ReceiverPair(ANCHOR, p_m)
    rd = frac * rx.baseline
    # the vertex lies on the baseline, so a ball wider than the baseline always meets the sheet
    radius = rx.baseline + extra
    b = Bounds(radius=radius)
    pts = sample_tdoa_locus(rd, rx, 64, b, rng)
    assert len(pts) == 64
    r, _ = rd_rrd(pts, np.zeros(3), rx.p_f, rx.p_m, rx.v_m)
    assert np.max(np.abs(r - rd)) < 1e-6
    assert np.all(np.linalg.norm(pts - rx.p_f, axis=1) <= radius + 1e-9)


def test_locus_errors():
    rx = ReceiverPair((0, 0, 0), (4, 0, 0))
    with pytest.raises(EmptyLocusError):
        sample_tdoa_locus(4.0, rx, 10, Bounds(), np.random.default_rng(0))
    # a depth slab the sheet never enters
    with pytest.raises(InfeasibleBoundsError):
        sample_tdoa_locus(3.9, rx, 10, Bounds(radius=1.0, z_min=0.5, z_max=0.9), np.random.default_rng(0), max_rounds=5)


def test_cost_zero_at_truth_noiseless():
    p, v = np.array([6.0, -4, -3]), np.array([0.3, 0.1, 0])
    b = make_burst(p, v)
    assert lcmap_cost(p, v, b, RM) == pytest.approx(0.0, abs=1e-18)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_cost_nonnegative_and_scales_with_r(seed):
    rng = np.random.default_rng(seed)
    b = make_burst(random_source(rng), K=5, noise=NoiseSpec(), seed=seed)
    P = rng.uniform(-10, 10, (20, 3))
    V = rng.uniform(-1, 1, (20, 3))
    J = lcmap_cost(P, V, b, RM)
    assert np.all(J >= 0)
    J2 = lcmap_cost(P, V, b, MeasurementNoise(2 * RM.R))
    np.testing.assert_allclose(J2, J / 2, rtol=1e-12)


def test_fim_single_frame_rank():
    b = make_burst((6, -4, -3), K=1)
    F = lcmap_fim(np.array([6.0, -4, -3]), np.array([0.1, 0, 0]), b, RM)
    assert np.linalg.matrix_rank(F, tol=1e-9 * np.abs(F).max()) <= 2


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_fim_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    b = make_burst(random_source(rng), K=8)
    P = np.array([random_source(rng) for _ in range(8)])
    F = lcmap_fim(P, rng.uniform(-1, 1, (8, 3)), b, RM)
    np.testing.assert_allclose(F, np.swapaxes(F, 1, 2), atol=1e-12)
    assert np.all(np.linalg.eigvalsh(F) >= -1e-9 * np.abs(F).max())


def test_fim_matches_finite_difference_information():
    p, v = np.array([6.0, -4, -3]), np.array([0.3, 0.1, 0])
    b = make_burst(p, v, K=6)
    F = lcmap_fim(p, v, b, RM)
    dt, _, p_f, p_m, v_m = b.arrays()
    x = np.r_[p, v]
    h = 1e-5

    def pred(x):
        pk = x[:3] + x[3:] * dt[:, None]
        rd, rrd = rd_rrd(pk, x[3:], p_f, p_m, v_m)
        return np.column_stack([rd, rrd])

    H = np.zeros((len(dt), 2, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        H[:, :, j] = (pred(x + e) - pred(x - e)) / (2 * h)
    Rinv = np.linalg.inv(RM.R)
    F_num = sum(Hk.T @ Rinv @ Hk for Hk in H)
    np.testing.assert_allclose(F, F_num, rtol=1e-5, atol=1e-5 * np.abs(F).max())


def test_lcmap_noiseless_near_true_locus_and_beats_naive():
    p, v = np.array([6.0, -4, -3]), np.array([0.2, -0.1, 0.0])
    b = make_burst(p, v, K=10)
    ini = init_lcmap(b, SMALL, RM, Model.CV, rng=np.random.default_rng(0))
    q, w = kinematics(ini.state.mean, Model.CV)
    f0 = b.frames[0]
    # distance to the true first-frame locus via a dense sample of it
    locus = sample_tdoa_locus(f0.rd, f0.rx, 20_000, SMALL.bounds, np.random.default_rng(1))
    assert np.min(np.linalg.norm(locus - q, axis=1)) < 2.0
    naive = init_naive(f0.rx).state.mean
    assert lcmap_cost(q, w, b, RM) < lcmap_cost(naive[:3], naive[3:6], b, RM)
    assert ini.t_ready == b.frames[-1].t


def test_lcmap_lambda_zero_is_argmin_of_j():
    p = np.array([6.0, -4, -3])
    b = make_burst(p, K=10, noise=NoiseSpec())
    cfg = replace(SMALL, lam=0.0)
    ini = init_lcmap(b, cfg, RM, Model.STATIC, rng=np.random.default_rng(5))
    J_best = lcmap_cost(ini.state.mean[:3], np.zeros(3), b, RM)
    cand = sample_tdoa_locus(b.frames[0].rd, b.frames[0].rx, cfg.M_pos, cfg.bounds, np.random.default_rng(5))
    assert J_best <= lcmap_cost(cand, np.zeros((len(cand), 3)), b, RM).min() + 1e-9


def test_lcmap_score_decomposition():
    p = np.array([6.0, -4, -3])
    v = np.array([0.1, 0.2, 0.0])
    b = make_burst(p, v, K=10)
    J = lcmap_cost(p, v, b, RM)
    F = lcmap_fim(p, v, b, RM)
    _, logdet = np.linalg.slogdet(F + 1e-6 * np.eye(6))
    assert np.isfinite(logdet)

    def score(lam, ld):
        return J - lam * ld

    assert score(0.0, logdet) == J
    assert score(1.0, logdet + 1) < score(1.0, logdet)


def test_lcmap_polish_is_deterministic():
    b = make_burst((6, -4, -3), (0.2, 0, 0), K=10, noise=NoiseSpec(), seed=3)
    a = init_lcmap(b, SMALL, RM, Model.CV, rng=np.random.default_rng(4)).state
    c = init_lcmap(b, SMALL, RM, Model.CV, rng=np.random.default_rng(4)).state
    np.testing.assert_array_equal(a.mean, c.mean)
    np.testing.assert_array_equal(a.cov, c.cov)


def test_lcmap_covariance_floor():
    b = make_burst((6, -4, -3), K=10)
    s = init_lcmap(b, SMALL, RM, Model.STATIC, rng=np.random.default_rng(0)).state
    assert np.all(np.diag(s.cov)[:3] >= SMALL.floor_pos_std**2 - 1e-12)


def test_lcmap_empty_locus_error():
    rx = ReceiverPair((0, 0, 0), (4, 0, 0))
    b = Burst([MeasurementFrame(0.0, 5.0, 0.0, rx)])
    with pytest.raises(EmptyLocusError):
        init_lcmap(b, SMALL, RM)


def test_lcmap_near_baseline_rd_is_clipped():
    rx = ReceiverPair((0, 0, -1), (4, 0, -1))
    b = Burst([MeasurementFrame(0.0, 4.05, 0.0, rx)])
    ini = init_lcmap(b, SMALL, RM, Model.STATIC, rng=np.random.default_rng(0))
    assert np.all(np.isfinite(ini.state.mean))


def test_lcmap_infeasible_bounds_falls_back_to_naive():
    rx = ReceiverPair((0, 0, -1), (4, 0, -1))
    b = Burst([MeasurementFrame(0.0, 3.9, 0.0, rx)])
    cfg = replace(SMALL, bounds=Bounds(radius=1.0, z_min=5.0, z_max=6.0))
    ini = init_lcmap(b, cfg, RM)
    assert ini.fallback and ini.method == "lc_map"
    np.testing.assert_allclose(ini.state.mean[:3], rx.midpoint)


def test_all_initializers_finite_psd_1000_bursts():
    rng = np.random.default_rng(10)
    cfg = LcMapConfig(M_pos=16, M_vel=4, polish_steps=2)
    models = list(Model)
    for i in range(1000):
        model = models[i % 4]
        b = make_burst(random_source(rng, 25.0), rng.uniform(-1, 1, 3), K=4, noise=NoiseSpec(), seed=i)
        for ini in (
            init_naive(b.frames[0].rx, model),
            init_random_sphere(b, cfg, rng, model),
            init_tdoa_ls(b, model),
            init_lcmap(b, cfg, RM, model, rng=rng) if abs(b.frames[0].rd) < b.frames[0].rx.baseline + 0.3 else None,
        ):
            if ini is None:
                continue
            assert np.all(np.isfinite(ini.state.mean)) and np.all(np.isfinite(ini.state.cov))
            np.linalg.cholesky(ini.state.cov + 1e-12 * np.eye(model.n))


def test_multimode_alternatives_are_separated():
    b = make_burst((6, -4, -3), K=10, noise=NoiseSpec())
    ini = init_lcmap(b, SMALL, RM, Model.STATIC, rng=np.random.default_rng(0))
    pts = [ini.state.mean[:3]] + [a.mean[:3] for a in ini.alternatives]
    assert 1 <= len(pts) <= SMALL.n_hypotheses
    assert all(np.isfinite(a.mean).all() for a in ini.alternatives)


def test_predicted_measurements_zero_at_truth_sanity():
    p = np.array([6.0, -4, -3])
    b = make_burst(p, K=2)
    for f in b.frames:
        assert (f.rd, f.rrd) == pytest.approx(predict_measurement(SourceKinematics(p), f.rx))
