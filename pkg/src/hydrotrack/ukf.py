"""Unscented Kalman filter over the RD/RRD measurement model.

Scaled unscented transform with the usual (alpha, beta, kappa) weighting.
Measurement biases enter additively: ``h(x) = [RD + b_p, RRD + b_v]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import rd_rrd
from .motion import Model, biases, kinematics, normalize, propagate, wrap_angle

MAX_JITTER = 1e-9
NEAR_RECEIVER = 1e-6
PUSH_RADIUS = 1e-3


class FilterDivergenceError(RuntimeError):
    """Covariance could not be repaired into a PSD matrix."""


class NonPSDCovarianceError(FilterDivergenceError):
    pass


@dataclass
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray
    model: Model = Model.CV

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.model.n
        if self.mean.shape != (n,) or self.cov.shape != (n, n):
            raise ValueError(f"{self.model.value} state needs mean ({n},) and cov ({n},{n})")

    def copy(self) -> "GaussianState":
        return GaussianState(self.mean.copy(), self.cov.copy(), self.model)


@dataclass(frozen=True)
class UtParams:
    """Scaled-UT parameters. ``kappa=None`` means ``3 - n``."""

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    def weights(self, n: int):
        kappa = 3.0 - n if self.kappa is None else self.kappa
        lam = self.alpha**2 * (n + kappa) - n
        if n + lam <= 0:
            raise ValueError("n + lambda must be positive")
        wm = np.full(2 * n + 1, 1.0 / (2 * (n + lam)))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1 - self.alpha**2 + self.beta
        return n + lam, wm, wc


@dataclass(frozen=True)
class MeasurementNoise:
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1**2, 0.05**2]))

    @classmethod
    def diag(cls, sigma_rd: float, sigma_rrd: float) -> "MeasurementNoise":
        return cls(np.diag([sigma_rd**2, sigma_rrd**2]))


@dataclass
class UpdateInfo:
    innovation: np.ndarray
    S: np.ndarray
    mahalanobis: float
    gated: bool


def repair_covariance(P: np.ndarray) -> np.ndarray:
    """Symmetrise and, if needed, add diagonal jitter up to ``MAX_JITTER``."""
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise FilterDivergenceError("non-finite covariance")
    jitter = 0.0
    while True:
        try:
            np.linalg.cholesky(P + jitter * np.eye(len(P)))
            return P + jitter * np.eye(len(P)) if jitter else P
        except np.linalg.LinAlgError:
            jitter = 1e-15 if jitter == 0 else jitter * 10
            if jitter > MAX_JITTER:
                raise FilterDivergenceError("covariance not PSD after jitter repair")


def sigma_points(state: GaussianState, params: UtParams = UtParams()):
    """Return ``(points (2n+1, n), wm, wc)``."""
    n = state.model.n
    c, wm, wc = params.weights(n)
    P = 0.5 * (state.cov + state.cov.T)
    L = None
    jitter = 0.0
    while L is None:
        try:
            L = np.linalg.cholesky(c * (P + jitter * np.eye(n)))
        except np.linalg.LinAlgError:
            jitter = 1e-15 if jitter == 0 else jitter * 10
            if jitter > MAX_JITTER:
                raise NonPSDCovarianceError("covariance is not positive semidefinite")
    pts = np.empty((2 * n + 1, n))
    pts[0] = state.mean
    pts[1 : n + 1] = state.mean + L.T
    pts[n + 1 :] = state.mean - L.T
    return pts, wm, wc


def _residuals(pts, ref, angle_index):
    d = pts - ref
    if angle_index is not None:
        d[..., angle_index] = wrap_angle(d[..., angle_index])
    return d


def _is_psd(P) -> bool:
    try:
        np.linalg.cholesky(0.5 * (P + P.T) + MAX_JITTER * np.eye(len(P)))
        return True
    except np.linalg.LinAlgError:
        return False


def _center_form(dx, dz, center_x, center_z, wc):
    """Cross-covariance about the transformed centre point, ignoring its weight.

    PSD by construction and exact on linear maps; used when a negative centre
    weight makes the standard form indefinite.
    """
    a, b = dx[1:] - center_x, dz[1:] - center_z
    return (wc[1:, None] * a).T @ b


def _weighted_mean(pts, wm, angle_index=None):
    # offsets from the centre point: the centre weight is large and negative for
    # small alpha, and weighting raw points would cancel catastrophically
    mean = pts[0] + wm[1:] @ (pts[1:] - pts[0])
    if angle_index is not None:
        # wrapped offsets; a sin/cos mean flips by pi once the spread nears a radian
        a0 = pts[0, angle_index]
        mean[angle_index] = wrap_angle(a0 + wm[1:] @ wrap_angle(pts[1:, angle_index] - a0))
    return mean


def unscented_transform(state: GaussianState, fn, params: UtParams = UtParams()):
    """Push sigma points through ``fn`` (state-space to state-space)."""
    pts, wm, wc = sigma_points(state, params)
    out = fn(pts)
    ai = state.model.angle_index
    mean = _weighted_mean(out, wm, ai)
    d = _residuals(out, mean, ai)
    cov = (wc[:, None] * d).T @ d
    if not _is_psd(cov):
        cov = _center_form(d, d, d[0], d[0], wc)
    return mean, cov


def predict(state: GaussianState, dt: float, Q: np.ndarray, params: UtParams = UtParams()) -> GaussianState:
    model = state.model
    mean, cov = unscented_transform(state, lambda x: propagate(x, dt, model), params)
    cov = repair_covariance(cov + Q)
    return GaussianState(normalize(mean, model), cov, model)


def measure(x: np.ndarray, model: Model, p_f, p_m, v_m) -> np.ndarray:
    """``h(x)`` for a stack of states, pushing near-receiver points off the receiver."""
    p, v = kinematics(x, model)
    p = np.array(p, copy=True)
    for rx in (p_m, p_f):
        d = p - rx
        r = np.linalg.norm(d, axis=-1)
        close = r < NEAR_RECEIVER
        if np.any(close):
            dirs = np.where(r[..., None] > 0, d / np.maximum(r, 1e-300)[..., None], np.array([0.0, 0.0, 1.0]))
            p = np.where(close[..., None], rx + PUSH_RADIUS * dirs, p)
    rd, rrd = rd_rrd(p, v, p_f, p_m, v_m)
    b_p, b_v = biases(x, model)
    return np.stack([rd + b_p, rrd + b_v], axis=-1)


def _linearize(state: GaussianState, rx, params: UtParams, center_form: bool = False):
    """Statistical linear regression of ``h`` about ``state``: ``(z_hat, Pzz, Pxz)``."""
    model = state.model
    pts, wm, wc = sigma_points(state, params)
    zs = measure(pts, model, rx.p_f, rx.p_m, rx.v_m)
    z_hat = _weighted_mean(zs, wm)
    dz = zs - z_hat
    dx = _residuals(pts, state.mean, model.angle_index)
    if center_form:
        return z_hat, _center_form(dz, dz, dz[0], dz[0], wc), _center_form(dx, dz, dx[0], dz[0], wc)
    return z_hat, (wc[:, None] * dz).T @ dz, (wc[:, None] * dx).T @ dz


def update(
    state: GaussianState,
    z,
    Rm: MeasurementNoise,
    params: UtParams = UtParams(),
    *,
    gate: float | None = 3.0,
    quality: float = 1.0,
    inflate_by_quality: bool = False,
):
    """UT measurement update.

    ``z`` is a :class:`~hydrotrack.channel.MeasurementFrame` (or anything with
    ``rd``, ``rrd``, ``rx``). Frames whose innovation Mahalanobis distance
    exceeds ``gate`` are rejected and the prior is returned unchanged.
    Returns ``(posterior, UpdateInfo)``.
    """
    model = state.model
    R = Rm.R / quality if inflate_by_quality else Rm.R
    zv = np.array([z.rd, z.rrd])
    info = None
    for center_form in (False, True):
        z_hat, Pzz, Pxz = _linearize(state, z.rx, params, center_form)
        S = Pzz + R
        y = zv - z_hat
        try:
            S_inv_y = np.linalg.solve(S, y)
        except np.linalg.LinAlgError as exc:
            raise FilterDivergenceError("singular innovation covariance") from exc
        if info is None:
            maha = float(np.sqrt(max(float(y @ S_inv_y), 0.0)))
            info = UpdateInfo(y, S, maha, False)
            if gate is not None and maha > gate:
                info.gated = True
                return state.copy(), info
        K = np.linalg.solve(S.T, Pxz.T).T
        cov = state.cov - K @ S @ K.T
        if _is_psd(Pzz) and _is_psd(cov):
            break
    post = GaussianState(normalize(state.mean + K @ y, model), repair_covariance(cov), model)
    return post, info


def project_depth(state: GaussianState, z_max: float | None) -> GaussianState:
    """Clamp the position mean to ``z <= z_max`` (the water surface); covariance is kept."""
    if z_max is None or state.mean[2] <= z_max:
        return state
    mean = state.mean.copy()
    mean[2] = z_max
    return GaussianState(mean, state.cov, state.model)
