"""Two-channel DSP front end: band-pass, TDOA by normalised cross-correlation,
narrowband delay unwrapping and FDOA from cross-phase rotation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import signal
from scipy.io import wavfile


class DspError(ValueError):
    pass


class InvalidBandError(DspError):
    pass


class FrameTooShortError(DspError):
    pass


class ZeroEnergyError(DspError):
    pass


class InsufficientBandEnergyError(DspError):
    pass


class WavFormatError(DspError):
    """Unsupported WAV layout; ``field`` names the offending header field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SampledFrame:
    ch1: np.ndarray
    ch2: np.ndarray
    fs: float
    t0: float = 0.0

    def __post_init__(self):
        self.ch1 = np.asarray(self.ch1, dtype=float)
        self.ch2 = np.asarray(self.ch2, dtype=float)
        if self.ch1.ndim != 1 or self.ch1.shape != self.ch2.shape:
            raise DspError("channels must be 1-D and of equal length")
        if len(self.ch1) < 2:
            raise DspError("frame needs at least 2 samples")
        if not self.fs > 0:
            raise DspError("sample rate must be positive")

    def __len__(self):
        return len(self.ch1)

    @property
    def duration(self) -> float:
        return len(self) / self.fs

    def swapped(self) -> "SampledFrame":
        return SampledFrame(self.ch2, self.ch1, self.fs, self.t0)

    def window(self, t_center: float, length_s: float) -> "SampledFrame":
        """Sub-frame of ``length_s`` seconds centred on absolute time ``t_center``, clipped to the data."""
        n = int(round(length_s * self.fs))
        start = int(round((t_center - self.t0) * self.fs)) - n // 2
        start = min(max(start, 0), max(len(self) - n, 0))
        stop = min(start + n, len(self))
        return SampledFrame(self.ch1[start:stop], self.ch2[start:stop], self.fs, self.t0 + start / self.fs)


@dataclass(frozen=True)
class BandSpec:
    f_lo: float
    f_hi: float
    order: int = 4

    def validate(self, fs: float) -> None:
        if not (0 < self.f_lo < self.f_hi < fs / 2):
            raise InvalidBandError(f"band [{self.f_lo}, {self.f_hi}] Hz invalid for fs={fs} Hz")
        if self.order < 1:
            raise InvalidBandError("filter order must be >= 1")

    @classmethod
    def around(cls, f0: float, half_width: float, order: int = 4) -> "BandSpec":
        return cls(f0 - half_width, f0 + half_width, order)


@dataclass
class TdoaTrack:
    """Unwrapping state: ``T0`` is the tone period, ``last_unwrapped`` the previous output."""

    T0: float
    last_unwrapped: float | None = None

    def __post_init__(self):
        if not self.T0 > 0:
            raise DspError("tone period must be positive")


class TdoaEstimate(NamedTuple):
    delay: float
    peak: float
    ambiguous: bool


class FdoaEstimate(NamedTuple):
    value: float
    quality: float


def _butter_sos(band: BandSpec, fs: float):
    band.validate(fs)
    return signal.butter(band.order, [band.f_lo, band.f_hi], btype="bandpass", fs=fs, output="sos")


def settling_length(sos, tol: float = 1e-4, max_len: int = 10_000_000) -> int:
    """Samples until the impulse-response envelope stays below ``tol`` of its peak."""
    n = 1024
    while True:
        imp = np.zeros(n)
        imp[0] = 1.0
        h = np.abs(signal.sosfilt(sos, imp))
        above = np.nonzero(h > tol * h.max())[0]
        last = int(above[-1]) + 1
        if last < n // 2 or n >= max_len:
            return last
        n *= 2


def bandpass_zero_phase(frame: SampledFrame, band: BandSpec) -> SampledFrame:
    """Forward-backward Butterworth band-pass of both channels with reflective padding."""
    sos = _butter_sos(band, frame.fs)
    settle = settling_length(sos)
    padlen = 3 * settle
    if len(frame) <= padlen:
        raise FrameTooShortError(f"frame of {len(frame)} samples needs more than {padlen} for this band")
    y = signal.sosfiltfilt(sos, np.vstack([frame.ch1, frame.ch2]), axis=1, padtype="even", padlen=padlen)
    return SampledFrame(y[0], y[1], frame.fs, frame.t0)


def default_max_lag(fs: float, baseline: float, c: float = 1500.0, margin: int = 16) -> int:
    return int(math.ceil(fs * baseline / c)) + margin


def _parabolic(y_m, y_0, y_p) -> float:
    den = y_m - 2 * y_0 + y_p
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (y_m - y_p) / den, -0.5, 0.5))


def estimate_tdoa_xcorr(frame: SampledFrame, max_lag: int | None = None) -> TdoaEstimate:
    """Delay of ch2 relative to ch1 (seconds) from the energy-normalised cross-correlation.

    The normalisation uses whole-frame energies. The integer peak lag is refined
    by a parabola through its neighbours. ``ambiguous`` is set when the second
    highest local maximum reaches within 1% of the peak.
    """
    s1, s2 = frame.ch1, frame.ch2
    n = len(s1)
    if max_lag is None:
        max_lag = n - 1
    if not 0 <= max_lag < n:
        raise DspError("max_lag must satisfy 0 <= max_lag < N")
    e1, e2 = float(s1 @ s1), float(s2 @ s2)
    if e1 <= 0 or e2 <= 0:
        raise ZeroEnergyError("a channel has zero energy")
    # correlate(s2, s1)[k] = sum_n s2[n + lag] s1[n]
    r = signal.correlate(s2, s1, mode="full", method="fft") / math.sqrt(e1 * e2)
    lags = signal.correlation_lags(n, n, mode="full")
    keep = np.abs(lags) <= max_lag
    r, lags = r[keep], lags[keep]
    i = int(np.argmax(r))
    frac = _parabolic(r[i - 1], r[i], r[i + 1]) if 0 < i < len(r) - 1 else 0.0
    interior = (r[1:-1] >= r[:-2]) & (r[1:-1] >= r[2:])
    peaks = np.sort(r[1:-1][interior])[::-1]
    ambiguous = bool(len(peaks) >= 2 and peaks[1] >= 0.99 * peaks[0])
    return TdoaEstimate((lags[i] + frac) / frame.fs, float(r[i]), ambiguous)


def unwrap_tdoa(track: TdoaTrack, measured: float) -> float:
    """Shift ``measured`` by whole tone periods to land closest to the previous output.

    The first call initialises the track with the raw value. Ties go to the
    smaller ``|n|``.
    """
    if track.last_unwrapped is None:
        track.last_unwrapped = float(measured)
        return float(measured)
    x = (track.last_unwrapped - measured) / track.T0
    lo = math.floor(x)
    cands = sorted({lo, lo + 1}, key=lambda k: (abs(measured + k * track.T0 - track.last_unwrapped), abs(k)))
    out = float(measured + cands[0] * track.T0)
    track.last_unwrapped = out
    return out


def _inband(frame: SampledFrame, band: BandSpec, rel_threshold: float):
    band.validate(frame.fs)
    n = len(frame)
    S1 = np.fft.rfft(frame.ch1)
    S2 = np.fft.rfft(frame.ch2)
    f = np.fft.rfftfreq(n, 1.0 / frame.fs)
    inband = (f >= band.f_lo) & (f <= band.f_hi)
    if not np.any(inband):
        raise InsufficientBandEnergyError("no DFT bins inside the band")
    for S in (S1, S2):
        in_e = np.sum(np.abs(S[inband]) ** 2)
        tot = np.sum(np.abs(S) ** 2)
        if tot <= 0 or in_e <= 1e-6 * tot:
            raise InsufficientBandEnergyError("tone energy missing from band on a channel")
    G = S1 * np.conj(S2)
    strong = inband & (np.abs(G) >= rel_threshold * np.abs(G[inband]).max())
    return S1, S2, G, f, inband, strong


def estimate_fdoa_phase_slope(
    frame: SampledFrame,
    band: BandSpec,
    *,
    n_blocks: int = 50,
    rel_threshold: float = 0.1,
    estimator: str = "rotation",
) -> FdoaEstimate:
    """Frequency offset ch1 minus ch2 (Hz) from the in-band cross-spectrum.

    ``estimator="rotation"`` (default) forms band-limited analytic signals from
    the in-band bins, takes their cross-signal ``a1 * conj(a2)`` and fits a line
    to its unwrapped phase over ``n_blocks`` sub-blocks; the slope over 2*pi is
    the frequency difference. ``estimator="spectral"`` fits the cross-phase
    against frequency over bins above ``rel_threshold`` of the peak and returns
    the slope over 2*pi unchanged (seconds, not Hz, for a stationary tone).

    ``quality`` is ``1 / (1 + rms phase residual)`` in (0, 1].
    """
    S1, S2, G, f, inband, strong = _inband(frame, band, rel_threshold)
    if estimator == "spectral":
        if strong.sum() < 2:
            raise InsufficientBandEnergyError("fewer than two usable cross-spectral bins")
        phi = np.unwrap(np.angle(G[strong]))
        coef, res = _linfit(f[strong], phi, weights=np.abs(G[strong]))
        return FdoaEstimate(coef / (2 * np.pi), 1.0 / (1.0 + res))
    if estimator != "rotation":
        raise ValueError(f"unknown FDOA estimator {estimator!r}")
    n = len(frame)
    if n < 2 * n_blocks:
        raise FrameTooShortError("frame too short for the requested sub-blocks")
    mask = inband.astype(float)
    # one-sided spectrum doubled gives the analytic signal
    a1 = np.fft.ifft(_analytic_spectrum(S1 * mask, n))
    a2 = np.fft.ifft(_analytic_spectrum(S2 * mask, n))
    cross = a1 * np.conj(a2)
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    blocks = np.array([cross[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])
    t = 0.5 * (edges[:-1] + edges[1:] - 1) / frame.fs
    if np.all(np.abs(blocks) == 0):
        raise InsufficientBandEnergyError("cross-signal vanished")
    phi = np.unwrap(np.angle(blocks))
    coef, res = _linfit(t, phi, weights=np.abs(blocks))
    return FdoaEstimate(coef / (2 * np.pi), 1.0 / (1.0 + res))


def _analytic_spectrum(S_half: np.ndarray, n: int) -> np.ndarray:
    full = np.zeros(n, dtype=complex)
    m = len(S_half)
    full[:m] = S_half
    if n % 2 == 0:
        full[1 : m - 1] *= 2
    else:
        full[1:m] *= 2
    return full


def _linfit(x, y, weights):
    w = np.asarray(weights, float)
    w = w / w.sum()
    xm, ym = w @ x, w @ y
    sxx = w @ (x - xm) ** 2
    slope = (w @ ((x - xm) * (y - ym))) / sxx
    resid = y - (ym + slope * (x - xm))
    return float(slope), float(np.sqrt(w @ resid**2))


def read_wav(path) -> SampledFrame:
    """Read a 2-channel IEEE-float32 WAV; channel 1 is the anchor, channel 2 the mobile."""
    path = Path(path)
    try:
        fs, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise WavFormatError("container", str(exc)) from exc
    if data.ndim != 2 or data.shape[1] != 2:
        ch = 1 if data.ndim == 1 else data.shape[1]
        raise WavFormatError("channels", f"expected 2 channels, found {ch}")
    if data.dtype != np.float32:
        raise WavFormatError("format", f"expected IEEE float 32-bit samples, found {data.dtype}")
    return SampledFrame(data[:, 0].astype(float), data[:, 1].astype(float), float(fs))


def write_wav(path, frame: SampledFrame) -> None:
    fs = int(round(frame.fs))
    if abs(fs - frame.fs) > 1e-9:
        raise WavFormatError("sample_rate", "WAV sample rate must be an integer number of Hz")
    wavfile.write(Path(path), fs, np.column_stack([frame.ch1, frame.ch2]).astype(np.float32))
