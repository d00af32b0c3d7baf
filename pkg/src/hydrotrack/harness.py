"""Scenario generation, seeded end-to-end trials and batch statistics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .channel import MeasurementFrame, NoiseSpec, simulate_measurement
from .geometry import DegenerateGeometryError, ReceiverPair, SourceKinematics, vec3
from .initializers import (
    Burst,
    EmptyLocusError,
    Initialization,
    LcMapConfig,
    PriorSpec,
    init_lcmap,
    init_naive,
    init_random_sphere,
    init_tdoa_ls,
)
from .pipeline import DspConfig, recording_frames
from .motion import Model, ProcessNoiseSpec, biases, kinematics, process_noise
from .ukf import FilterDivergenceError, GaussianState, MeasurementNoise, UtParams, predict, project_depth, update

THRESHOLDS = (0.1, 0.25, 0.5, 1.0, 2.0, 3.0)
SOURCE_MOTIONS = ("static", "cv", "ca", "turn", "straight", "arc", "u_shape")
RECEIVER_PATHS = ("helix", "circle", "square", "spiral", "lawnmower")
INITIALIZERS = ("naive", "random", "tdoa_ls", "lc_map")
AUTO_MODEL = {
    "static": Model.STATIC,
    "cv": Model.CV,
    "straight": Model.CV,
    "ca": Model.CA,
    "turn": Model.CTRV,
    "arc": Model.CTRV,
    "u_shape": Model.CTRV,
}


class UnknownTrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class SourceParams:
    speed: float = 0.2
    accel: float = 0.002
    turn_rate: float = 0.05
    arc_turn_rate: float = 0.02
    v_z: float = 0.0
    u_leg: float = 10.0
    u_radius: float = 3.0


@dataclass(frozen=True)
class ReceiverParams:
    radius: float = 5.0
    period: float = 60.0
    pitch: float = 0.5
    z_offset: float = -0.5
    side: float = 8.0
    spiral_r0: float = 1.0
    spiral_growth: float = 0.05
    lane_length: float = 10.0
    lane_spacing: float = 2.0
    lanes: int = 5
    speed: float = 0.5


@dataclass(frozen=True)
class FilterConfig:
    model: str = "auto"
    ut: UtParams = field(default_factory=UtParams)
    process: ProcessNoiseSpec = field(default_factory=ProcessNoiseSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    gate: float | None = 3.0
    r_mode: str = "gate"
    max_consecutive_gated: int = 10
    z_max: float | None = 0.0
    # competing initial hypotheses run side by side this long, then the best survives (0 = off)
    bank_window: float = 0.0
    bank_clip: float = 5.0


@dataclass(frozen=True)
class ScenarioConfig:
    source_motion: str = "static"
    source: SourceParams = field(default_factory=SourceParams)
    receiver_path: str = "helix"
    receiver: ReceiverParams = field(default_factory=ReceiverParams)
    anchor_pose: tuple = (0.0, 0.0, -0.96)
    meas_rate: float = 5.0
    duration: float = 120.0
    init_radius: float = 20.0
    keepout: float = 1.0
    surface_z: float | None = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    dsp: DspConfig = field(default_factory=DspConfig)
    initializer: str = "lc_map"
    burst_len: int = 100
    lcmap: LcMapConfig = field(default_factory=LcMapConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    dwell: float = 5.0
    thresholds: tuple = THRESHOLDS
    final_window: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.meas_rate > 0:
            raise ValueError("meas_rate must be positive")
        if not self.init_radius > 0:
            raise ValueError("init_radius must be positive")
        if self.source_motion not in SOURCE_MOTIONS:
            raise UnknownTrajectoryError(f"unknown source motion {self.source_motion!r}")
        if self.receiver_path not in RECEIVER_PATHS:
            raise UnknownTrajectoryError(f"unknown receiver path {self.receiver_path!r}")
        if self.initializer not in INITIALIZERS:
            raise ValueError(f"unknown initializer {self.initializer!r}")
        if self.burst_len < 1:
            raise ValueError("burst_len must be >= 1")

    @property
    def model(self) -> Model:
        if self.filter.model == "auto":
            return AUTO_MODEL[self.source_motion]
        return Model(self.filter.model)

    @property
    def anchor(self) -> np.ndarray:
        return vec3(self.anchor_pose)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.meas_rate)) + 1


# trajectories ------------------------------------------------------------


def _polyline(waypoints: np.ndarray, speed: float, t: float):
    """Constant-speed traversal of a closed polyline."""
    seg = np.diff(np.vstack([waypoints, waypoints[:1]]), axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    total = lengths.sum()
    s = (speed * t) % total
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
    frac = (s - cum[i]) / lengths[i]
    return waypoints[i] + frac * seg[i], speed * seg[i] / lengths[i]


def receiver_trajectory(kind: str, params: ReceiverParams, t: float, anchor=(0.0, 0.0, -0.96)):
    """Mobile hydrophone ``(position, velocity)`` at time ``t``, centred on the anchor."""
    a = vec3(anchor)
    pr = params
    if kind in ("helix", "circle"):
        w = 2 * math.pi / pr.period
        th = w * t
        pitch = pr.pitch if kind == "helix" else 0.0
        p = a + np.array([pr.radius * math.cos(th), pr.radius * math.sin(th), pr.z_offset + pitch * t / pr.period])
        v = np.array([-pr.radius * w * math.sin(th), pr.radius * w * math.cos(th), pitch / pr.period])
        return p, v
    if kind == "spiral":
        w = 2 * math.pi / pr.period
        r = pr.spiral_r0 + pr.spiral_growth * t
        th = w * t
        p = a + np.array([r * math.cos(th), r * math.sin(th), pr.z_offset])
        v = np.array(
            [
                pr.spiral_growth * math.cos(th) - r * w * math.sin(th),
                pr.spiral_growth * math.sin(th) + r * w * math.cos(th),
                0.0,
            ]
        )
        return p, v
    if kind == "square":
        h = pr.side / 2
        wp = np.array([[h, -h], [h, h], [-h, h], [-h, -h]])
        speed = 4 * pr.side / pr.period
    elif kind == "lawnmower":
        xs = np.linspace(-pr.lane_length / 2, pr.lane_length / 2, 2)
        ys = (np.arange(pr.lanes) - (pr.lanes - 1) / 2) * pr.lane_spacing
        fwd = []
        for i, y in enumerate(ys):
            row = xs if i % 2 == 0 else xs[::-1]
            fwd += [[row[0], y], [row[1], y]]
        fwd = np.array(fwd)
        wp = np.vstack([fwd, fwd[-2:0:-1]])
        speed = pr.speed
    else:
        raise UnknownTrajectoryError(f"unknown receiver path {kind!r}")
    q, dq = _polyline(wp, speed, t)
    return a + np.array([q[0], q[1], pr.z_offset]), np.array([dq[0], dq[1], 0.0])


def _arc(p0, heading, speed, omega, vz, t):
    th = heading + omega * t
    if abs(omega) < 1e-12:
        dx, dy = speed * t * math.cos(heading), speed * t * math.sin(heading)
    else:
        dx = speed / omega * (math.sin(th) - math.sin(heading))
        dy = speed / omega * (math.cos(heading) - math.cos(th))
    p = p0 + np.array([dx, dy, vz * t])
    v = np.array([speed * math.cos(th), speed * math.sin(th), vz])
    return p, v


def source_trajectory(kind: str, params: SourceParams, t: float, p0, heading: float = 0.0) -> SourceKinematics:
    """Source kinematics at ``t`` for a start ``p0`` and initial horizontal ``heading``."""
    p0 = vec3(p0)
    sp = params
    d = np.array([math.cos(heading), math.sin(heading), 0.0])
    if kind == "static":
        return SourceKinematics(p0, np.zeros(3))
    if kind in ("cv", "straight"):
        v = sp.speed * d + np.array([0, 0, sp.v_z])
        return SourceKinematics(p0 + v * t, v)
    if kind == "ca":
        v0 = sp.speed * d + np.array([0, 0, sp.v_z])
        acc = sp.accel * d
        return SourceKinematics(p0 + v0 * t + 0.5 * acc * t * t, v0 + acc * t)
    if kind in ("turn", "arc"):
        w = sp.turn_rate if kind == "turn" else sp.arc_turn_rate
        return SourceKinematics(*_arc(p0, heading, sp.speed, w, sp.v_z, t))
    if kind == "u_shape":
        t1 = sp.u_leg / sp.speed
        t2 = t1 + math.pi * sp.u_radius / sp.speed
        w = sp.speed / sp.u_radius
        if t <= t1:
            return SourceKinematics(*_arc(p0, heading, sp.speed, 0.0, sp.v_z, t))
        pa, _ = _arc(p0, heading, sp.speed, 0.0, sp.v_z, t1)
        if t <= t2:
            p, v = _arc(pa, heading, sp.speed, w, sp.v_z, t - t1)
            return SourceKinematics(p, v)
        pb, _ = _arc(pa, heading, sp.speed, w, sp.v_z, t2 - t1)
        return SourceKinematics(*_arc(pb, heading + math.pi, sp.speed, 0.0, sp.v_z, t - t2))
    raise UnknownTrajectoryError(f"unknown source motion {kind!r}")


# metrics -----------------------------------------------------------------


def convergence_time(t, errors, threshold: float, dwell: float = 5.0) -> float | None:
    """First time the error drops below ``threshold`` and stays there for ``dwell`` seconds.

    Near the end of the series the remaining samples stand in for the full dwell.
    NaN errors (no estimate yet) count as above threshold.
    """
    t = np.asarray(t, float)
    e = np.asarray(errors, float)
    if len(t) == 0:
        raise ValueError("empty error series")
    below = e < threshold
    # index of the next sample at or above threshold, for each position
    n = len(e)
    next_bad = np.full(n + 1, n)
    for i in range(n - 1, -1, -1):
        next_bad[i] = next_bad[i + 1] if below[i] else i
    eps = 1e-9
    for i in np.nonzero(below)[0]:
        j = next_bad[i]
        if j == n or t[j] > t[i] + dwell + eps:
            return float(t[i])
    return None


@dataclass
class TrialResult:
    t: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray
    bias: np.ndarray
    error: np.ndarray
    gated: np.ndarray
    convergence: dict
    success: dict
    diverged: bool = False
    init_method: str = ""
    init_fallback: bool = False
    trial_seed: int = 0

    @property
    def convergence_time(self) -> float | None:
        return self.convergence.get(1.0)

    @property
    def gated_count(self) -> int:
        return int(self.gated.sum())

    def rmse_final(self, window: float) -> float:
        m = self.t >= self.t[-1] - window - 1e-9
        return float(np.sqrt(np.mean(self.error[m] ** 2)))


def _scenario_rngs(trial_seed: int):
    ss = np.random.SeedSequence(trial_seed)
    scen, meas, init = ss.spawn(3)
    return np.random.default_rng(scen), np.random.default_rng(meas), np.random.default_rng(init)


def _sample_start(cfg: ScenarioConfig, rng) -> np.ndarray:
    rx0, _ = receiver_trajectory(cfg.receiver_path, cfg.receiver, 0.0, cfg.anchor)
    for _ in range(10_000):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        p = cfg.init_radius * rng.uniform() ** (1 / 3) * d
        if cfg.surface_z is not None and p[2] > cfg.surface_z:
            continue
        if np.linalg.norm(p - cfg.anchor) > cfg.keepout and np.linalg.norm(p - rx0) > cfg.keepout:
            return p
    raise RuntimeError("could not place the source outside the receiver keep-out")


def scenario_paths(cfg: ScenarioConfig, trial_seed: int):
    """``(source(t) -> SourceKinematics, mobile(t) -> (p, v))`` for one trial."""
    rng_s, _, _ = _scenario_rngs(trial_seed)
    p0 = _sample_start(cfg, rng_s)
    heading = float(rng_s.uniform(-math.pi, math.pi))

    def source(t):
        return source_trajectory(cfg.source_motion, cfg.source, t, p0, heading)

    def mobile(t):
        return receiver_trajectory(cfg.receiver_path, cfg.receiver, t, cfg.anchor)

    return source, mobile


def scenario(cfg: ScenarioConfig, trial_seed: int):
    """Ground truth and measurements for one trial.

    Returns ``(times, truth list, frames)``; ``frames[k]`` is ``None`` when the
    geometry at step ``k`` is degenerate. Depends only on the scenario fields
    of ``cfg`` and ``trial_seed``, so every initializer sees the same data.
    """
    _, rng_m, _ = _scenario_rngs(trial_seed)
    source, mobile = scenario_paths(cfg, trial_seed)
    times = np.arange(cfg.n_steps) / cfg.meas_rate
    truth, frames = [], []
    for tk in times:
        src = source(tk)
        pm, vm = mobile(tk)
        rx = ReceiverPair(cfg.anchor, pm, vm)
        truth.append(src)
        try:
            frames.append(simulate_measurement(src, rx, cfg.noise, rng_m, t=float(tk)))
        except DegenerateGeometryError:
            rng_m.standard_normal(2)
            frames.append(None)
    return times, truth, frames


# smallest sigmas the filter assumes; exact (noiseless) data would otherwise make R singular
SIGMA_FLOOR = (1e-3, 5e-4)


def filter_noise(cfg: ScenarioConfig) -> MeasurementNoise:
    return MeasurementNoise.diag(max(cfg.noise.sigma_rd, SIGMA_FLOOR[0]), max(cfg.noise.sigma_rrd, SIGMA_FLOOR[1]))


def initialize(cfg: ScenarioConfig, burst: Burst, rng) -> Initialization:
    model = cfg.model
    prior = cfg.filter.prior
    Rm = filter_noise(cfg)
    if cfg.initializer == "naive":
        return init_naive(burst.frames[0].rx, model, prior)
    if cfg.initializer == "random":
        return init_random_sphere(burst, cfg.lcmap, rng, model, prior)
    if cfg.initializer == "tdoa_ls":
        return init_tdoa_ls(burst, model, prior)
    try:
        return init_lcmap(burst, cfg.lcmap, Rm, model, prior, rng)
    except EmptyLocusError:
        out = init_naive(burst.frames[0].rx, model, prior)
        out.method, out.fallback = "lc_map", True
        return out


@dataclass
class _Track:
    state: GaussianState
    t_prev: float
    run_of_gated: int = 0
    loglik: float = 0.0
    diverged: bool = False
    gated: bool = False


@dataclass
class FilterRun:
    estimate: np.ndarray
    bias: np.ndarray
    gated: np.ndarray
    diverged: bool


def _advance(tr: _Track, t: float, frame, fc: FilterConfig, model: Model, Rm, Q_cache: dict) -> None:
    tr.gated = False
    if tr.diverged:
        return
    try:
        dt = t - tr.t_prev
        if dt > 1e-12:
            key = round(dt, 12)
            if key not in Q_cache:
                Q_cache[key] = process_noise(fc.process, dt, model)
            tr.state = predict(tr.state, dt, Q_cache[key], fc.ut)
            tr.t_prev = t
        if frame is not None:
            gate = fc.gate if fc.r_mode == "gate" and tr.run_of_gated < fc.max_consecutive_gated else None
            tr.state, info = update(
                tr.state, frame, Rm, fc.ut, gate=gate, quality=frame.quality, inflate_by_quality=fc.r_mode == "inflate"
            )
            tr.state = project_depth(tr.state, fc.z_max)
            tr.gated = info.gated
            tr.run_of_gated = tr.run_of_gated + 1 if info.gated else 0
            m = min(info.mahalanobis, fc.bank_clip)
            tr.loglik -= 0.5 * (m * m + math.log(max(np.linalg.det(info.S), 1e-300)))
    except FilterDivergenceError:
        tr.diverged = True


def run_filter(
    times, frames, init: Initialization, model: Model, fc: FilterConfig, Rm: MeasurementNoise, t0: float
) -> FilterRun:
    """UKF over ``frames`` (``None`` = no measurement at that time) starting at ``t0``.

    Rows before ``init.t_ready`` are NaN.

    With ``fc.bank_window > 0`` the alternatives carried by ``init`` run in
    parallel for that many seconds; the reported estimate is the hypothesis with the highest clipped
    innovation log-likelihood so far, and only that one continues afterwards.
    """
    seeds = [init.state, *init.alternatives] if fc.bank_window > 0 else [init.state]
    tracks = [_Track(s, t0) for s in seeds]
    n = len(times)
    est = np.zeros((n, 6))
    bias = np.zeros((n, 2))
    gated = np.zeros(n, dtype=bool)
    Q_cache: dict = {}
    for k in range(n):
        if len(tracks) > 1 and times[k] - t0 > fc.bank_window:
            tracks = [_best(tracks)]
        for tr in tracks:
            _advance(tr, times[k], frames[k], fc, model, Rm, Q_cache)
        tr = _best(tracks)
        p, v = kinematics(tr.state.mean, model)
        est[k, :3], est[k, 3:] = p, v
        bias[k] = biases(tr.state.mean, model)
        gated[k] = tr.gated
    if init.t_ready is not None:
        # the filter replays the burst, but its output only exists once the burst is in
        early = np.asarray(times) < init.t_ready - 1e-9
        est[early], bias[early] = np.nan, np.nan
    return FilterRun(est, bias, gated, _best(tracks).diverged)


def _best(tracks: list[_Track]) -> _Track:
    alive = [t for t in tracks if not t.diverged] or tracks[:1]
    return max(alive, key=lambda t: t.loglik)


def run_trial(cfg: ScenarioConfig, trial_seed: int) -> TrialResult:
    """Scenario, burst initialisation and UKF filtering from the first frame onward."""
    times, truth, frames = scenario(cfg, trial_seed)
    _, _, rng_i = _scenario_rngs(trial_seed)
    valid = [f for f in frames if f is not None]
    burst = Burst(valid[: cfg.burst_len])
    init = initialize(cfg, burst, rng_i)
    Rm = filter_noise(cfg)
    run = run_filter(times, frames, init, cfg.model, cfg.filter, Rm, burst.frames[0].t)
    tru = np.array([np.concatenate([s.p_s, s.v_s]) for s in truth])
    err = np.linalg.norm(run.estimate[:, :3] - tru[:, :3], axis=1)
    conv, succ = {}, {}
    for th in cfg.thresholds:
        c = None if run.diverged else convergence_time(times, err, th, cfg.dwell)
        conv[th] = c
        succ[th] = c is not None and c <= cfg.duration
    return TrialResult(
        times, tru, run.estimate, run.bias, err, run.gated, conv, succ, run.diverged, init.method, init.fallback,
        int(trial_seed),
    )


@dataclass
class RecordingRun:
    times: np.ndarray
    frames: list
    run: FilterRun
    init: Initialization


def run_recording(cfg: ScenarioConfig, rec, t_track, p_track, v_track) -> RecordingRun:
    """Offline mode: DSP over a two-channel recording, then initialisation and the UKF."""
    times, frames = recording_frames(rec, cfg.anchor, t_track, p_track, v_track, cfg.dsp, cfg.meas_rate)
    burst = Burst(frames[: cfg.burst_len])
    init = initialize(cfg, burst, np.random.default_rng(cfg.seed))
    Rm = filter_noise(cfg)
    run = run_filter(times, frames, init, cfg.model, cfg.filter, Rm, burst.frames[0].t)
    return RecordingRun(times, frames, run, init)


# batches -----------------------------------------------------------------


def trial_seed(master_seed: int, index: int) -> int:
    """Per-trial seed from ``(master_seed, index)``; independent of batch size."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class CellStats:
    source_motion: str
    initializer: str
    n_trials: int
    success_rate: dict
    mean_convergence_time: float | None
    median_convergence_time: float | None
    n_converged: int
    rmse_final_mean: float
    rmse_final_median: float
    rmse_final_p95: float
    n_diverged: int
    rmse_final: list = field(default_factory=list)


@dataclass
class SummaryStats:
    cells: list
    thresholds: tuple = THRESHOLDS

    def cell(self, source_motion: str, initializer: str) -> CellStats:
        for c in self.cells:
            if c.source_motion == source_motion and c.initializer == initializer:
                return c
        raise KeyError((source_motion, initializer))

    def to_dict(self) -> dict:
        return {"thresholds": list(self.thresholds), "cells": [_cell_dict(c) for c in self.cells]}


def _cell_dict(c: CellStats) -> dict:
    d = asdict(c)
    d["success_rate"] = {f"{k:g}": v for k, v in c.success_rate.items()}
    return d


def summarize(cfg: ScenarioConfig, results: list[TrialResult]) -> CellStats:
    n = len(results)
    rates = {th: sum(r.success[th] for r in results) / n for th in cfg.thresholds}
    ct = [r.convergence_time for r in results if r.success.get(1.0)]
    rm = np.array([r.rmse_final(cfg.final_window) for r in results])
    return CellStats(
        cfg.source_motion,
        cfg.initializer,
        n,
        rates,
        float(np.mean(ct)) if ct else None,
        float(np.median(ct)) if ct else None,
        len(ct),
        float(np.mean(rm)),
        float(np.median(rm)),
        float(np.percentile(rm, 95)),
        sum(r.diverged for r in results),
        rm.tolist(),
    )


def _run_indexed(args):
    cfg, idx = args
    return run_trial(cfg, trial_seed(cfg.seed, idx))


def run_trials(cfg: ScenarioConfig, n_trials: int, workers: int = 1) -> list[TrialResult]:
    if n_trials < 1:
        raise ValueError("need at least one trial")
    jobs = [(cfg, i) for i in range(n_trials)]
    if workers <= 1:
        return [_run_indexed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_indexed, jobs, chunksize=max(1, n_trials // (4 * workers))))


def run_batch(cfg: ScenarioConfig, n_trials: int, workers: int = 1) -> SummaryStats:
    return run_sweep([cfg], n_trials, workers)


def run_sweep(cfgs: list[ScenarioConfig], n_trials: int, workers: int = 1, keep: list | None = None) -> SummaryStats:
    """Run each config for ``n_trials``; trials of all cells share one worker pool.

    When ``keep`` is a list, the per-cell trial lists are appended to it.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    jobs = [(c, i) for c in cfgs for i in range(n_trials)]
    if workers <= 1:
        flat = [_run_indexed(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            flat = list(ex.map(_run_indexed, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    cells = []
    for ci, c in enumerate(cfgs):
        res = flat[ci * n_trials : (ci + 1) * n_trials]
        if keep is not None:
            keep.append(res)
        cells.append(summarize(c, res))
    return SummaryStats(cells, tuple(cfgs[0].thresholds))


def with_cell(cfg: ScenarioConfig, source_motion: str, initializer: str) -> ScenarioConfig:
    return replace(cfg, source_motion=source_motion, initializer=initializer)
