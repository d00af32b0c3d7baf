"""World-frame kinematic types and the exact RD/RRD measurement model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGENERATE_EPS = 1e-9


class DegenerateGeometryError(ValueError):
    """Source coincides with a receiver, so a line-of-sight unit vector is undefined."""


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a finite 3-vector from ``(x, y, z)`` or a single length-3 sequence."""
    if y is None and z is None:
        arr = np.asarray(x, dtype=float).reshape(-1)
    else:
        arr = np.array([x, y, z], dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite vector component in {arr}")
    return arr


@dataclass(frozen=True)
class ReceiverPair:
    """Fixed (anchor) and mobile hydrophone snapshot. The anchor never moves."""

    p_f: np.ndarray
    p_m: np.ndarray
    v_m: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "p_f", vec3(self.p_f))
        object.__setattr__(self, "p_m", vec3(self.p_m))
        object.__setattr__(self, "v_m", vec3(self.v_m))
        if self.baseline <= DEGENERATE_EPS:
            raise DegenerateGeometryError("fixed and mobile hydrophones coincide")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.p_m - self.p_f))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p_f + self.p_m)


@dataclass(frozen=True)
class SourceKinematics:
    p_s: np.ndarray
    v_s: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "p_s", vec3(self.p_s))
        object.__setattr__(self, "v_s", vec3(self.v_s))


@dataclass(frozen=True)
class AcousticConstants:
    """Sound speed ``c`` (m/s) and source tone frequency ``f0`` (Hz)."""

    c: float = 1500.0
    f0: float = 1500.0

    def __post_init__(self):
        if not (self.c > 0 and self.f0 > 0):
            raise ValueError("sound speed and tone frequency must be positive")


def _unit(d: np.ndarray) -> tuple[np.ndarray, float]:
    r = float(np.linalg.norm(d))
    if r < DEGENERATE_EPS:
        raise DegenerateGeometryError("source within 1e-9 m of a receiver")
    return d / r, r


def range_difference(src: SourceKinematics, rx: ReceiverPair) -> float:
    """``|p_s - p_m| - |p_s - p_f|`` in meters."""
    _, d_m = _unit(src.p_s - rx.p_m)
    _, d_f = _unit(src.p_s - rx.p_f)
    return d_m - d_f


def range_rate_difference(src: SourceKinematics, rx: ReceiverPair) -> float:
    """Difference of the radial closing rates, mobile minus fixed, in m/s."""
    u_m, _ = _unit(src.p_s - rx.p_m)
    u_f, _ = _unit(src.p_s - rx.p_f)
    return float((src.v_s - rx.v_m) @ u_m - src.v_s @ u_f)


def predict_measurement(src: SourceKinematics, rx: ReceiverPair) -> tuple[float, float]:
    return range_difference(src, rx), range_rate_difference(src, rx)


def tdoa_of(rd: float, k: AcousticConstants) -> float:
    return rd / k.c


def fdoa_of(rrd: float, k: AcousticConstants) -> float:
    return rrd * k.f0 / k.c


def rd_of_tdoa(tdoa: float, k: AcousticConstants) -> float:
    return tdoa * k.c


def rrd_of_fdoa(fdoa: float, k: AcousticConstants) -> float:
    return fdoa * k.c / k.f0


def rd_rrd(p, v, p_f, p_m, v_m, *, check: bool = True):
    """Vectorised RD/RRD over leading axes.

    All arguments broadcast against ``(..., 3)``. Returns ``(rd, rrd)`` with the
    broadcast leading shape. With ``check=False`` degenerate entries produce
    non-finite values instead of raising.
    """
    dm = p - p_m
    df = p - p_f
    rm = np.linalg.norm(dm, axis=-1)
    rf = np.linalg.norm(df, axis=-1)
    if check and (np.any(rm < DEGENERATE_EPS) or np.any(rf < DEGENERATE_EPS)):
        raise DegenerateGeometryError("source within 1e-9 m of a receiver")
    with np.errstate(divide="ignore", invalid="ignore"):
        rrd = np.sum((v - v_m) * dm, axis=-1) / rm - np.sum(v * df, axis=-1) / rf
    return rm - rf, rrd


def measurement_jacobian(p, v, p_f, p_m, v_m) -> np.ndarray:
    """Analytic Jacobian of ``(RD, RRD)`` with respect to ``(p, v)``.

    Inputs broadcast against ``(..., 3)``; returns ``(..., 2, 6)``.
    """
    p, v = np.asarray(p, float), np.asarray(v, float)
    dm = p - p_m
    df = p - p_f
    rm = np.linalg.norm(dm, axis=-1, keepdims=True)
    rf = np.linalg.norm(df, axis=-1, keepdims=True)
    if np.any(rm < DEGENERATE_EPS) or np.any(rf < DEGENERATE_EPS):
        raise DegenerateGeometryError("source within 1e-9 m of a receiver")
    um = dm / rm
    uf = df / rf
    rel = v - v_m
    # d/dp of w.u for u = d/|d| is (w - (w.u) u) / |d|
    drrd_dp = (rel - np.sum(rel * um, axis=-1, keepdims=True) * um) / rm - (
        v - np.sum(v * uf, axis=-1, keepdims=True) * uf
    ) / rf
    shape = np.broadcast_shapes(um.shape, drrd_dp.shape)[:-1]
    H = np.zeros(shape + (2, 6))
    H[..., 0, :3] = um - uf
    H[..., 1, :3] = drrd_dp
    H[..., 1, 3:] = um - uf
    return H
