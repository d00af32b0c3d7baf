"""Initial filter states from early measurements.

Three baselines (naive midpoint, random sphere, single-TDOA least squares) and
the locus-conditioned MAP search: candidates are drawn on the first frame's
range-difference hyperboloid, paired with velocities consistent with the
range-rate, and scored by the burst residual minus a weighted log-determinant
of the burst Fisher information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import MeasurementFrame
from .geometry import ReceiverPair, measurement_jacobian, rd_rrd
from .motion import Model
from .ukf import GaussianState, MeasurementNoise


class EmptyLocusError(ValueError):
    """Range difference at or beyond the baseline: no hyperboloid exists."""


class InfeasibleBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Default initial standard deviations for states an initializer does not inform."""

    pos_std: float = 10.0
    vel_std: float = 1.0
    bias_p_std: float = 0.01
    bias_v_std: float = 0.005
    accel_std: float = 0.005
    turn_std: float = 0.1


@dataclass(frozen=True)
class Bounds:
    """Search region: ball of ``radius`` around the anchor, optionally clipped in depth."""

    radius: float = 30.0
    z_min: float = -math.inf
    z_max: float = math.inf

    def __post_init__(self):
        if not self.radius > 0 or not self.z_min < self.z_max:
            raise InfeasibleBoundsError("bounds are empty")

    def contains(self, p: np.ndarray, center: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        return (
            (np.linalg.norm(p - center, axis=-1) <= self.radius)
            & (p[:, 2] >= self.z_min)
            & (p[:, 2] <= self.z_max)
        )


@dataclass(frozen=True)
class LcMapConfig:
    M_pos: int = 512
    M_vel: int = 32
    lam: float = 1.0
    eps_fim: float = 1e-6
    bounds: Bounds = field(default_factory=lambda: Bounds(z_max=0.0))
    v_max: float = 3.0
    polish_steps: int = 10
    trust_radius: float = 5.0
    top_fraction: float = 0.05
    floor_pos_std: float | None = 1.0
    floor_vel_std: float | None = 0.3
    n_hypotheses: int = 8
    min_separation: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.M_pos < 1 or self.M_vel < 1 or self.lam < 0 or self.eps_fim <= 0 or self.v_max <= 0 or self.n_hypotheses < 1:
            raise ValueError("invalid LC-MAP configuration")


@dataclass
class Burst:
    frames: list[MeasurementFrame]

    def __post_init__(self):
        if not self.frames:
            raise ValueError("burst needs at least one frame")
        ts = [f.t for f in self.frames]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("burst frames must be time-ordered")

    @property
    def K(self) -> int:
        return len(self.frames)

    def arrays(self):
        """``(dt, z, p_f, p_m, v_m)`` stacked over frames; ``dt`` relative to the first frame."""
        t0 = self.frames[0].t
        dt = np.array([f.t - t0 for f in self.frames])
        z = np.array([[f.rd, f.rrd] for f in self.frames])
        p_f = np.array([f.rx.p_f for f in self.frames])
        p_m = np.array([f.rx.p_m for f in self.frames])
        v_m = np.array([f.rx.v_m for f in self.frames])
        return dt, z, p_f, p_m, v_m


@dataclass
class Initialization:
    state: GaussianState
    method: str
    converged: bool = True
    fallback: bool = False
    iterations: int = 0
    score: float = math.nan
    # runner-up modes, same covariance as ``state``; a filter bank may test them
    alternatives: list[GaussianState] = field(default_factory=list)
    # time of the last frame the initializer consumed; no estimate exists before it
    t_ready: float | None = None


def state_from_kinematics(
    model: Model,
    p: np.ndarray,
    v: np.ndarray,
    P_pv: np.ndarray | None = None,
    prior: PriorSpec = PriorSpec(),
) -> GaussianState:
    """Lay out a position/velocity estimate in ``model``'s state vector.

    ``P_pv`` is the 6x6 position/velocity covariance (defaults from ``prior``).
    Biases start at zero with prior variances.
    """
    p, v = np.asarray(p, float), np.asarray(v, float)
    if P_pv is None:
        P_pv = np.diag([prior.pos_std**2] * 3 + [prior.vel_std**2] * 3)
    n = model.n
    mean = np.zeros(n)
    cov = np.zeros((n, n))
    mean[:3] = p
    if model is Model.STATIC:
        cov[:3, :3] = P_pv[:3, :3]
    elif model in (Model.CV, Model.CA):
        mean[3:6] = v
        cov[:6, :6] = P_pv
        if model is Model.CA:
            cov[6:9, 6:9] = np.eye(3) * prior.accel_std**2
    else:
        s = math.hypot(v[0], v[1])
        Pv = P_pv[3:5, 3:5]
        mean[3], mean[6] = s, v[2]
        idx = [0, 1, 2, 3, 4, 6]
        if s > math.sqrt(np.trace(Pv)):
            th = math.atan2(v[1], v[0])
            mean[4] = th
            # d(p, s, th, vz)/d(p, vx, vy, vz); a full congruence keeps P PSD
            J = np.eye(6)
            J[3:5, 3:5] = [[math.cos(th), math.sin(th)], [-math.sin(th) / s, math.cos(th) / s]]
            cov[np.ix_(idx, idx)] = J @ P_pv @ J.T
        else:
            # heading unobservable at low speed: drop its correlations
            mean[4] = math.atan2(v[1], v[0]) if s > 0 else 0.0
            keep = [0, 1, 2, 5]
            sub = [0, 1, 2, 6]
            cov[np.ix_(sub, sub)] = P_pv[np.ix_(keep, keep)]
            cov[3, 3] = np.trace(Pv)
            cov[4, 4] = math.pi**2 / 3
        cov[5, 5] = prior.turn_std**2
    cov[model.bias_p_index, model.bias_p_index] = prior.bias_p_std**2
    if model.bias_v_index is not None:
        cov[model.bias_v_index, model.bias_v_index] = prior.bias_v_std**2
    return GaussianState(mean, 0.5 * (cov + cov.T), model)


def init_naive(rx: ReceiverPair, model: Model = Model.CV, prior: PriorSpec = PriorSpec()) -> Initialization:
    return Initialization(state_from_kinematics(model, rx.midpoint, np.zeros(3), prior=prior), "naive")


def init_random_sphere(
    burst: Burst,
    cfg: LcMapConfig,
    rng: np.random.Generator,
    model: Model = Model.CV,
    prior: PriorSpec = PriorSpec(),
) -> Initialization:
    """Best of ``M_pos`` random points in spherical shells about the receiver midpoint.

    Each candidate gets a uniform direction and a radius uniform in
    ``[0.5, bounds.radius]``; the one with the smallest first-frame |RD residual|
    wins. Velocity starts at zero.
    """
    f0 = burst.frames[0]
    mid = f0.rx.midpoint
    d = rng.standard_normal((cfg.M_pos, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0.5, cfg.bounds.radius, cfg.M_pos)
    cand = mid + r[:, None] * d
    rd, _ = rd_rrd(cand, np.zeros(3), f0.rx.p_f, f0.rx.p_m, f0.rx.v_m, check=False)
    resid = np.abs(rd - f0.rd)
    resid[~np.isfinite(resid)] = np.inf
    best = int(np.argmin(resid))
    return Initialization(
        state_from_kinematics(model, cand[best], np.zeros(3), prior=prior), "random", score=float(resid[best])
    )


def init_tdoa_ls(
    burst: Burst,
    model: Model = Model.CV,
    prior: PriorSpec = PriorSpec(),
    *,
    max_iter: int = 50,
    tol: float = 1e-3,
    damping: float = 1e-2,
) -> Initialization:
    """Levenberg-damped Gauss-Newton on the first frame's RD residual from the midpoint."""
    f0 = burst.frames[0]
    rx = f0.rx
    p = rx.midpoint.copy()
    mu = damping
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rd, _ = rd_rrd(p, np.zeros(3), rx.p_f, rx.p_m, rx.v_m)
        r = float(rd - f0.rd)
        g = measurement_jacobian(p, np.zeros(3), rx.p_f, rx.p_m, rx.v_m)[0, :3]
        step = -g * r / (g @ g + mu)
        new = p + step
        rd_new, _ = rd_rrd(new, np.zeros(3), rx.p_f, rx.p_m, rx.v_m, check=False)
        if np.isfinite(rd_new) and abs(rd_new - f0.rd) <= abs(r):
            p = new
            mu = max(mu / 3, 1e-9)
        else:
            mu *= 4
        if np.linalg.norm(step) < tol:
            converged = True
            break
    return Initialization(
        state_from_kinematics(model, p, np.zeros(3), prior=prior), "tdoa_ls", converged=converged, iterations=it
    )


def sample_tdoa_locus(
    rd: float, rx: ReceiverPair, M: int, bounds: Bounds, rng: np.random.Generator, *, max_rounds: int = 200
) -> np.ndarray:
    """``M`` points uniform by area on the sheet ``|p - p_m| - |p - p_f| = rd`` inside ``bounds``.

    The sheet is parameterised by the radial distance from the baseline axis and
    the azimuth about it; the along-axis coordinate follows in closed form.
    """
    D = rx.baseline
    if abs(rd) >= D:
        raise EmptyLocusError(f"|rd|={abs(rd):.4g} m is not below the baseline {D:.4g} m")
    u = (rx.p_m - rx.p_f) / D
    # orthonormal frame around the baseline axis
    helper = np.array([1.0, 0, 0]) if abs(u[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    o = rx.midpoint
    a, c = abs(rd) / 2, D / 2
    b = math.sqrt(c * c - a * a)
    sign = -1.0 if rd > 0 else 1.0  # positive rd lies nearer the anchor
    # on the sheet |x| >= a rho / b, so staying within radius + c of o caps rho
    rho_max = (bounds.radius + c) * b / c
    slope_max = c / b
    out = []
    have = 0
    for _ in range(max_rounds):
        k = max(2 * (M - have), 64)
        rho = rho_max * np.sqrt(rng.uniform(0, 1, k))
        phi = rng.uniform(0, 2 * np.pi, k)
        root = np.sqrt(1 + (rho / b) ** 2)
        # area element relative to the flat-disc proposal
        slope = np.sqrt(1 + (a * rho / (b * b * root)) ** 2)
        keep = rng.uniform(0, slope_max, k) <= slope
        x = sign * a * root
        pts = o + x[:, None] * u + (rho * np.cos(phi))[:, None] * e1 + (rho * np.sin(phi))[:, None] * e2
        pts = pts[keep]
        pts = pts[bounds.contains(pts, rx.p_f)]
        out.append(pts)
        have += len(pts)
        if have >= M:
            return np.concatenate(out)[:M]
    raise InfeasibleBoundsError("could not draw enough locus points inside the bounds")


def _burst_predict(p, v, dt, p_f, p_m, v_m):
    """Predicted (RD, RRD) per frame for candidates moving at constant velocity.

    ``p``, ``v``: ``(C, 3)``; returns ``(C, K, 2)``.
    """
    pk = p[:, None, :] + v[:, None, :] * dt[None, :, None]
    rd, rrd = rd_rrd(pk, v[:, None, :], p_f[None], p_m[None], v_m[None], check=False)
    return np.stack([rd, rrd], axis=-1)


def _as_candidates(p, v):
    p = np.atleast_2d(np.asarray(p, float))
    v = np.atleast_2d(np.asarray(v, float))
    return np.broadcast_to(p, np.broadcast_shapes(p.shape, v.shape)), np.broadcast_to(
        v, np.broadcast_shapes(p.shape, v.shape)
    )


def lcmap_cost(p, v, burst: Burst, Rm: MeasurementNoise) -> np.ndarray | float:
    """Quadratic burst residual ``sum_k r_k^T R^-1 r_k``; ``p`` is the position at the first frame."""
    scalar = np.ndim(p) == 1 and np.ndim(v) == 1
    P, V = _as_candidates(p, v)
    dt, z, p_f, p_m, v_m = burst.arrays()
    r = z[None] - _burst_predict(P, V, dt, p_f, p_m, v_m)
    Rinv = np.linalg.inv(Rm.R)
    J = np.einsum("cki,ij,ckj->c", r, Rinv, r)
    return float(J[0]) if scalar else J


def lcmap_fim(p, v, burst: Burst, Rm: MeasurementNoise) -> np.ndarray:
    """Burst Fisher information ``sum_k H_k^T R^-1 H_k`` over ``(p, v)`` at the first frame.

    ``H_k`` chains the per-frame measurement Jacobian through the constant
    velocity displacement ``p + v * dt_k``. Returns ``(6, 6)`` or ``(C, 6, 6)``.
    """
    scalar = np.ndim(p) == 1 and np.ndim(v) == 1
    P, V = _as_candidates(p, v)
    dt, _, p_f, p_m, v_m = burst.arrays()
    pk = P[:, None, :] + V[:, None, :] * dt[None, :, None]
    H = measurement_jacobian(pk, V[:, None, :], p_f[None], p_m[None], v_m[None]).copy()
    H[..., 3:] += H[..., :3] * dt[None, :, None, None]
    W = np.linalg.cholesky(np.linalg.inv(Rm.R)).T
    A = (W @ H).reshape(len(P), -1, 6)
    F = np.swapaxes(A, 1, 2) @ A
    F = 0.5 * (F + np.swapaxes(F, -1, -2))
    return F[0] if scalar else F


def _velocity_candidates(p, frame: MeasurementFrame, rrd_target, M_vel, v_max, rng):
    """``M_vel`` velocities per position: radial part solves the RRD equation, rest sampled."""
    C = len(p)
    rx = frame.rx
    dm = p - rx.p_m
    df = p - rx.p_f
    um = dm / np.linalg.norm(dm, axis=1, keepdims=True)
    uf = df / np.linalg.norm(df, axis=1, keepdims=True)
    g = um - uf
    gn = np.linalg.norm(g, axis=1)
    ok = gn > 1e-3
    ghat = np.where(ok[:, None], g / np.where(ok, gn, 1.0)[:, None], 0.0)
    # (v - v_m).um - v.uf = rrd  =>  v.g = rrd + v_m.um
    s = np.where(ok, (rrd_target + um @ rx.v_m) / np.where(ok, gn, 1.0), 0.0)
    s = np.clip(s, -v_max, v_max)
    v_par = s[:, None] * ghat
    room = np.sqrt(np.maximum(v_max**2 - s**2, 0.0))
    w = rng.standard_normal((C, M_vel, 3))
    w -= np.sum(w * ghat[:, None, :], axis=-1, keepdims=True) * ghat[:, None, :]
    wn = np.linalg.norm(w, axis=-1, keepdims=True)
    w = w / np.where(wn > 0, wn, 1.0)
    # uniform over the disc orthogonal to g
    rad = room[:, None] * np.sqrt(rng.uniform(0, 1, (C, M_vel)))
    V = v_par[:, None, :] + rad[..., None] * w
    V[:, 0] = v_par
    if M_vel > 1:
        V[:, 1] = 0.0
    return V


def _polish(p, v, burst, Rm, steps, trust, fit_velocity, bounds: Bounds | None = None):
    """Damped Gauss-Newton on the burst residual.

    Only ever lowers J, stays within ``trust`` of the start and inside ``bounds``.
    """
    dt, z, p_f, p_m, v_m = burst.arrays()
    W = np.linalg.cholesky(np.linalg.inv(Rm.R)).T
    x0 = np.concatenate([p, v])
    x = x0.copy()
    J = lcmap_cost(x[:3], x[3:], burst, Rm)
    mu = 1e-3
    dims = 6 if fit_velocity else 3
    for _ in range(steps):
        pc, vc = x[None, :3], x[None, 3:]
        r = (z[None] - _burst_predict(pc, vc, dt, p_f, p_m, v_m))[0]
        pk = pc + vc * dt[:, None]
        H = measurement_jacobian(pk, vc, p_f, p_m, v_m).copy()
        H[..., 3:] += H[..., :3] * dt[:, None, None]
        A = np.einsum("ab,kbj->kaj", W, H).reshape(-1, 6)[:, :dims]
        b = np.einsum("ab,kb->ka", W, r).reshape(-1)
        N = A.T @ A
        improved = False
        for _ in range(8):
            try:
                step = np.linalg.solve(N + mu * (np.diag(np.diag(N)) + 1e-9 * np.eye(dims)), A.T @ b)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            cand = x.copy()
            cand[:dims] += step
            outside = bounds is not None and not bounds.contains(cand[:3], p_f[0])[0]
            if outside or np.linalg.norm(cand[:3] - x0[:3]) > trust:
                mu *= 10
                continue
            Jc = lcmap_cost(cand[:3], cand[3:], burst, Rm)
            if np.isfinite(Jc) and Jc < J:
                x, J, mu = cand, Jc, max(mu / 10, 1e-9)
                improved = True
                break
            mu *= 10
        if not improved:
            break
    return x[:3], x[3:], J


def init_lcmap(
    burst: Burst,
    cfg: LcMapConfig,
    Rm: MeasurementNoise,
    model: Model = Model.CV,
    prior: PriorSpec = PriorSpec(),
    rng: np.random.Generator | None = None,
) -> Initialization:
    """Locus-conditioned MAP initial state.

    Minimises ``J(p, v) - lam * log det(F(p, v) + eps I)`` over candidates on the
    first frame's RD locus. For the static model velocity candidates are zero.
    The winner is polished on ``J`` alone, and its covariance comes from the
    spread of the best-scoring candidates, never tighter than ``prior``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    f0 = burst.frames[0]
    D = f0.rx.baseline
    rd0 = f0.rd
    if abs(rd0) >= D:
        # measurement noise can push a near-axis source just past the baseline
        if abs(rd0) >= D + 3 * math.sqrt(Rm.R[0, 0]):
            raise EmptyLocusError(f"first-frame |rd|={abs(rd0):.4g} m exceeds baseline {D:.4g} m")
        rd0 = math.copysign(D * (1 - 1e-6), rd0)
    try:
        P = sample_tdoa_locus(rd0, f0.rx, cfg.M_pos, cfg.bounds, rng)
    except InfeasibleBoundsError:
        return _naive_fallback(f0.rx, model, prior)
    static = model is Model.STATIC
    if static:
        V = np.zeros((len(P), 1, 3))
    else:
        rrd_mean = float(np.mean([f.rrd for f in burst.frames]))
        V = _velocity_candidates(P, f0, rrd_mean, cfg.M_vel, cfg.v_max, rng)
    mv = V.shape[1]
    Pc = np.repeat(P, mv, axis=0)
    Vc = V.reshape(-1, 3)
    J = lcmap_cost(Pc, Vc, burst, Rm)
    F = lcmap_fim(Pc, Vc, burst, Rm)
    sign, logdet = np.linalg.slogdet(F + cfg.eps_fim * np.eye(6))
    logdet = np.where(sign > 0, logdet, -np.inf)
    score = J - cfg.lam * logdet
    score[~np.isfinite(score)] = np.inf
    if not np.any(np.isfinite(score)):
        return _naive_fallback(f0.rx, model, prior)
    order = _distinct_modes(Pc, score, cfg.n_hypotheses, cfg.min_separation)
    floor = replace(
        prior,
        pos_std=prior.pos_std if cfg.floor_pos_std is None else cfg.floor_pos_std,
        vel_std=prior.vel_std if cfg.floor_vel_std is None else cfg.floor_vel_std,
    )
    P_pv = _candidate_spread(Pc, Vc, score, cfg.top_fraction, floor)
    modes = []
    for i in order:
        p, v, s = Pc[i], Vc[i], float(score[i])
        if cfg.polish_steps > 0:
            p, v, _ = _polish(p, v, burst, Rm, cfg.polish_steps, cfg.trust_radius, fit_velocity=not static, bounds=cfg.bounds)
            # rescore at the polished point so the ranking reflects the refined fit
            Jp = lcmap_cost(p[None], v[None], burst, Rm)[0]
            sg, ld = np.linalg.slogdet(lcmap_fim(p[None], v[None], burst, Rm)[0] + cfg.eps_fim * np.eye(6))
            s = float(Jp - cfg.lam * ld) if sg > 0 and np.isfinite(Jp) else np.inf
        modes.append((s, p, v))
    modes.sort(key=lambda m: m[0])
    states = [state_from_kinematics(model, p, np.zeros(3) if static else v, P_pv, prior) for _, p, v in modes]
    return Initialization(
        states[0], "lc_map", score=modes[0][0], alternatives=states[1:], t_ready=burst.frames[-1].t
    )


def _distinct_modes(Pc, score, n, min_sep) -> list[int]:
    """Indices of up to ``n`` best-scoring candidates at least ``min_sep`` apart."""
    picked: list[int] = []
    for i in np.argsort(score, kind="stable"):
        if not np.isfinite(score[i]) or len(picked) == n:
            break
        if all(np.linalg.norm(Pc[i] - Pc[j]) >= min_sep for j in picked):
            picked.append(int(i))
    return picked


def _naive_fallback(rx, model, prior) -> Initialization:
    out = init_naive(rx, model, prior)
    out.method, out.fallback = "lc_map", True
    return out


def _candidate_spread(Pc, Vc, score, top_fraction, prior: PriorSpec) -> np.ndarray:
    finite = np.isfinite(score)
    k = max(2, int(math.ceil(top_fraction * finite.sum())))
    idx = np.argsort(score, kind="stable")[:k]
    X = np.hstack([Pc[idx], Vc[idx]])
    C = np.cov(X, rowvar=False) if len(idx) > 1 else np.zeros((6, 6))
    floor = np.array([prior.pos_std**2] * 3 + [prior.vel_std**2] * 3)
    d = np.sqrt(np.maximum(np.diag(C), floor) / np.maximum(np.diag(C), 1e-300))
    # rescale each axis up to the floor, keeping correlations
    C = C * np.outer(d, d)
    C[np.diag_indices(6)] = np.maximum(np.diag(C), floor)
    return C
