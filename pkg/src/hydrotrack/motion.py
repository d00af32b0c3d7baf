"""Filter state layouts and source motion models (static, CV, CA, CTRV).

Layouts::

    STATIC  [px, py, pz, b_p]                                        n=4
    CV      [px, py, pz, vx, vy, vz, b_p, b_v]                       n=8
    CA      [px, py, pz, vx, vy, vz, ax, ay, az, b_p, b_v]           n=11
    CTRV    [px, py, pz, speed_h, heading, turn_rate, vz, b_p, b_v]  n=9

All functions accept a single state ``(n,)`` or a stack ``(..., n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

OMEGA_EPS = 1e-6


class Model(str, enum.Enum):
    STATIC = "static"
    CV = "cv"
    CA = "ca"
    CTRV = "ctrv"

    @property
    def n(self) -> int:
        return {"static": 4, "cv": 8, "ca": 11, "ctrv": 9}[self.value]

    @property
    def angle_index(self) -> int | None:
        return 4 if self is Model.CTRV else None

    @property
    def bias_p_index(self) -> int:
        return self.n - 1 if self is Model.STATIC else self.n - 2

    @property
    def bias_v_index(self) -> int | None:
        return None if self is Model.STATIC else self.n - 1


# accel_psd per model when left unset; CA's is a jerk intensity
DEFAULT_ACCEL_PSD = {Model.STATIC: 0.1, Model.CV: 1e-5, Model.CA: 1e-8, Model.CTRV: 1e-5}


@dataclass(frozen=True)
class ProcessNoiseSpec:
    """Process-noise intensities; see :func:`process_noise` for how each enters Q.

    ``accel_psd`` drives the kinematic states (acceleration for CV/CTRV, jerk
    for CA, position jitter for STATIC); ``None`` picks the per-model value in
    ``DEFAULT_ACCEL_PSD``. ``bias_rw_p``/``bias_rw_v`` are bias random-walk
    intensities and ``turn_rw`` drives the CTRV turn rate.
    """

    accel_psd: float | None = None
    bias_rw_p: float = 0.0
    bias_rw_v: float = 0.0
    turn_rw: float = 1e-5

    def __post_init__(self):
        vals = [self.bias_rw_p, self.bias_rw_v, self.turn_rw]
        if self.accel_psd is not None:
            vals.append(self.accel_psd)
        if min(vals) < 0:
            raise ValueError("process noise intensities must be nonnegative")

    def accel_for(self, model: Model) -> float:
        return DEFAULT_ACCEL_PSD[model] if self.accel_psd is None else self.accel_psd


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def propagate(x: np.ndarray, dt: float, model: Model) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(x, dtype=float, copy=True)
    if model is Model.STATIC:
        return x
    if model is Model.CV:
        x[..., 0:3] += x[..., 3:6] * dt
        return x
    if model is Model.CA:
        x[..., 0:3] += x[..., 3:6] * dt + 0.5 * x[..., 6:9] * dt * dt
        x[..., 3:6] += x[..., 6:9] * dt
        return x
    s, th, w = x[..., 3], x[..., 4], x[..., 5]
    straight = np.abs(w) <= OMEGA_EPS
    w_safe = np.where(straight, 1.0, w)
    th1 = th + w * dt
    dx_arc = s / w_safe * (np.sin(th1) - np.sin(th))
    dy_arc = s / w_safe * (np.cos(th) - np.cos(th1))
    # second-order straight-line limit keeps the switch continuous at OMEGA_EPS
    dx_lin = s * dt * (np.cos(th) - 0.5 * w * dt * np.sin(th))
    dy_lin = s * dt * (np.sin(th) + 0.5 * w * dt * np.cos(th))
    x[..., 0] += np.where(straight, dx_lin, dx_arc)
    x[..., 1] += np.where(straight, dy_lin, dy_arc)
    x[..., 2] += x[..., 6] * dt
    x[..., 4] = wrap_angle(th1)
    return x


def kinematics(x: np.ndarray, model: Model) -> tuple[np.ndarray, np.ndarray]:
    """Position and Cartesian velocity ``(..., 3)`` encoded in a state."""
    x = np.asarray(x, float)
    p = x[..., 0:3]
    if model is Model.STATIC:
        v = np.zeros_like(p)
    elif model is Model.CTRV:
        s, th = x[..., 3], x[..., 4]
        v = np.stack([s * np.cos(th), s * np.sin(th), x[..., 6]], axis=-1)
    else:
        v = x[..., 3:6]
    return p, v


def biases(x: np.ndarray, model: Model) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, float)
    b_p = x[..., model.bias_p_index]
    b_v = x[..., model.bias_v_index] if model.bias_v_index is not None else np.zeros_like(b_p)
    return b_p, b_v


def normalize(x: np.ndarray, model: Model) -> np.ndarray:
    """Enforce CTRV ``speed_h >= 0`` and heading in (-pi, pi]; no-op otherwise."""
    if model is not Model.CTRV:
        return x
    x = np.array(x, float, copy=True)
    neg = x[..., 3] < 0
    x[..., 3] = np.abs(x[..., 3])
    x[..., 4] = wrap_angle(np.where(neg, x[..., 4] + np.pi, x[..., 4]))
    return x


def _dwna(dt: float) -> np.ndarray:
    return np.array([[dt**4 / 4, dt**3 / 2], [dt**3 / 2, dt**2]])


def _dwpa(dt: float) -> np.ndarray:
    g = np.array([dt**2 / 2, dt, 1.0])
    return np.outer(g, g)


def process_noise(spec: ProcessNoiseSpec, dt: float, model: Model) -> np.ndarray:
    """Discrete process-noise covariance for one step of length ``dt``.

    CV uses per-axis discrete white-noise-acceleration blocks, CA per-axis
    Wiener-process-acceleration blocks, CTRV treats longitudinal acceleration
    isotropically in the plane plus a white-noise turn acceleration. Biases are
    independent random walks with variance ``dt * bias_rw``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = model.n
    Q = np.zeros((n, n))
    q = spec.accel_for(model)
    if model is Model.STATIC:
        Q[0:3, 0:3] = np.eye(3) * q * dt**4 / 4
    elif model is Model.CV:
        B = _dwna(dt) * q
        for ax in range(3):
            idx = np.ix_([ax, 3 + ax], [ax, 3 + ax])
            Q[idx] = B
    elif model is Model.CA:
        B = _dwpa(dt) * q
        for ax in range(3):
            i = [ax, 3 + ax, 6 + ax]
            Q[np.ix_(i, i)] = B
    else:
        B = _dwna(dt) * q
        Q[0, 0] = Q[1, 1] = B[0, 0]
        Q[3, 3] = B[1, 1]
        Q[np.ix_([2, 6], [2, 6])] = B
        Q[np.ix_([4, 5], [4, 5])] = _dwna(dt) * spec.turn_rw
    Q[model.bias_p_index, model.bias_p_index] = dt * spec.bias_rw_p
    if model.bias_v_index is not None:
        Q[model.bias_v_index, model.bias_v_index] = dt * spec.bias_rw_v
    return Q
