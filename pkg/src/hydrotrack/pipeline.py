"""Waveform mode: two-channel audio to RD/RRD frames, and recordings from scenarios.

A tone at ``f0`` carries Doppler (FDOA). An optional wideband probe carries
delay; without it the delay comes from the tone and is unwrapped frame to frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import D_REF, AliasingError, MeasurementFrame, NoiseSpec, synthesize_waveforms
from .dsp import (
    BandSpec,
    DspError,
    SampledFrame,
    TdoaTrack,
    bandpass_zero_phase,
    default_max_lag,
    estimate_fdoa_phase_slope,
    estimate_tdoa_xcorr,
    unwrap_tdoa,
)
from .geometry import AcousticConstants, ReceiverPair, SourceKinematics


@dataclass(frozen=True)
class DspConfig:
    fs: float = 200_000.0
    c: float = 1500.0
    f0: float = 1500.0
    tone_half_width: float = 100.0
    # None means narrowband operation: delay from the tone, then unwrapped
    probe_band: tuple[float, float] | None = (4_000.0, 20_000.0)
    probe_tones: int = 256
    tdoa_window: float = 0.05
    fdoa_window: float = 1.0
    n_blocks: int = 50
    order: int = 4
    rel_threshold: float = 0.1

    def __post_init__(self):
        if not (self.fs > 0 and self.c > 0 and self.f0 > 0 and self.tone_half_width > 0):
            raise ValueError("fs, c, f0 and tone_half_width must be positive")
        if not (self.tdoa_window > 0 and self.fdoa_window > 0):
            raise ValueError("analysis windows must be positive")

    @property
    def constants(self) -> AcousticConstants:
        return AcousticConstants(self.c, self.f0)

    @property
    def tone_band(self) -> BandSpec:
        return BandSpec.around(self.f0, self.tone_half_width, self.order)

    @property
    def delay_band(self) -> BandSpec:
        if self.probe_band is None:
            return self.tone_band
        return BandSpec(*self.probe_band, self.order)

    @property
    def narrowband(self) -> bool:
        return self.probe_band is None


def _tdoa(frame: SampledFrame, rx: ReceiverPair, dsp: DspConfig, track: TdoaTrack | None) -> float:
    if dsp.narrowband:
        # a tone only fixes the delay modulo its period
        half = int(math.floor(0.5 * dsp.fs / dsp.f0))
        tau = estimate_tdoa_xcorr(frame, max_lag=min(half, len(frame) - 1)).delay
        return unwrap_tdoa(track, tau) if track is not None else tau
    max_lag = min(default_max_lag(dsp.fs, rx.baseline, dsp.c), len(frame) - 1)
    return estimate_tdoa_xcorr(frame, max_lag=max_lag).delay


def measure_frame(
    delay_frame: SampledFrame,
    tone_frame: SampledFrame,
    rx: ReceiverPair,
    dsp: DspConfig,
    *,
    t: float = 0.0,
    track: TdoaTrack | None = None,
    prefiltered: bool = False,
) -> MeasurementFrame:
    """RD/RRD from one delay window and one tone window.

    ``rd = c * tdoa`` (positive when channel 2 lags) and
    ``rrd = c * fdoa / f0`` (``fdoa`` is channel 1 minus channel 2).
    """
    if not prefiltered:
        tone_frame = bandpass_zero_phase(tone_frame, dsp.tone_band)
        if not dsp.narrowband:
            delay_frame = bandpass_zero_phase(delay_frame, dsp.delay_band)
    if dsp.narrowband:
        # the tone band-pass needs the long window, so the delay comes from it too
        delay_frame = tone_frame
    tau = _tdoa(delay_frame, rx, dsp, track)
    fd = estimate_fdoa_phase_slope(tone_frame, dsp.tone_band, n_blocks=dsp.n_blocks, rel_threshold=dsp.rel_threshold)
    q = min(max(fd.quality, 1e-6), 1.0)
    return MeasurementFrame(t, dsp.c * tau, dsp.c * fd.value / dsp.f0, rx, q)


def synthesize_frame(
    src: SourceKinematics, rx: ReceiverPair, noise: NoiseSpec, dsp: DspConfig, t_center: float = 0.0, rng=None
) -> tuple[SampledFrame, SampledFrame]:
    """``(delay_frame, tone_frame)`` for one measurement instant with frozen kinematics.

    In narrowband mode both are the same tone frame.
    """
    k = dsp.constants
    tone = synthesize_waveforms(src, rx, k, noise, dsp.fs, dsp.fdoa_window, t_center=t_center, rng=rng)
    if dsp.narrowband:
        return tone, tone
    delay = synthesize_waveforms(
        src, rx, k, noise, dsp.fs, dsp.tdoa_window, t_center=t_center, waveform="wideband",
        probe_band=dsp.probe_band, probe_tones=dsp.probe_tones, rng=rng,
    )
    return delay, tone


def synthesize_recording(
    source, p_f, mobile, t_start: float, duration: float, noise: NoiseSpec, dsp: DspConfig, grid_rate: float = 1000.0
) -> SampledFrame:
    """Continuous two-channel recording of tone plus optional probe.

    ``source(t)`` returns :class:`SourceKinematics`; ``mobile(t)`` returns the
    mobile hydrophone ``(p, v)``. Each channel renders ``s(t - d_i(t) / c)`` with
    distances evaluated on a ``grid_rate`` grid and linearly interpolated, so
    Doppler follows from the changing path length.
    """
    n = int(round(duration * dsp.fs))
    if n < 2:
        raise DspError("duration shorter than two samples")
    f_max = dsp.f0 if dsp.narrowband else max(dsp.probe_band)
    t = t_start + np.arange(n) / dsp.fs
    n_grid = max(2, int(math.ceil(duration * grid_rate)) + 1)
    tg = np.linspace(t_start, t[-1], n_grid)
    anchor = np.asarray(p_f, float)
    d = np.empty((2, n_grid))
    for j, tj in enumerate(tg):
        s = source(tj)
        d[0, j] = np.linalg.norm(s.p_s - anchor)
        d[1, j] = np.linalg.norm(s.p_s - np.asarray(mobile(tj)[0], float))
    rate = np.abs(np.diff(d, axis=1)).max() * grid_rate if n_grid > 1 else 0.0
    if f_max * (1 + rate / dsp.c) >= dsp.fs / 2:
        raise AliasingError(f"Doppler-shifted content at {f_max * (1 + rate / dsp.c):.1f} Hz aliases at fs={dsp.fs}")
    if not dsp.narrowband:
        prng = np.random.default_rng([noise.seed, 0x9E37])
        probe_f = prng.uniform(*dsp.probe_band, dsp.probe_tones)
        probe_ph = prng.uniform(0, 2 * np.pi, dsp.probe_tones)
    rng = np.random.default_rng(noise.seed)
    out = []
    for i in range(2):
        di = np.interp(t, tg, d[i])
        e = t - di / dsp.c
        x = np.sin(2 * np.pi * dsp.f0 * e)
        if not dsp.narrowband:
            for a in range(0, dsp.probe_tones, 16):
                f, ph = probe_f[a : a + 16, None], probe_ph[a : a + 16, None]
                x += np.sqrt(2.0 / dsp.probe_tones) * np.sin(2 * np.pi * f * e + ph).sum(axis=0)
        x /= np.maximum(di, D_REF)
        if noise.awgn_snr_db is not None:
            sigma = math.sqrt(float(np.mean(x * x)) / 10 ** (noise.awgn_snr_db / 10))
            x += sigma * rng.standard_normal(n)
        out.append(x)
    return SampledFrame(out[0], out[1], dsp.fs, t_start)


def frame_times(rec: SampledFrame, rate: float, window: float, t_lo=-math.inf, t_hi=math.inf) -> np.ndarray:
    """Measurement instants at ``rate`` whose full ``window`` lies inside the recording and track span."""
    lo = max(rec.t0 + window / 2, t_lo)
    hi = min(rec.t0 + rec.duration - window / 2, t_hi)
    if hi < lo:
        raise DspError("recording shorter than one analysis window")
    k = np.arange(int(math.floor((hi - lo) * rate + 1e-9)) + 1)
    return lo + k / rate


def interpolate_track(t_track, p, v, t) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of the mobile hydrophone track at time ``t``."""
    pi = np.array([np.interp(t, t_track, p[:, j]) for j in range(3)])
    vi = np.array([np.interp(t, t_track, v[:, j]) for j in range(3)])
    return pi, vi


def recording_frames(
    rec: SampledFrame, anchor, t_track, p_track, v_track, dsp: DspConfig, rate: float
) -> tuple[np.ndarray, list[MeasurementFrame]]:
    """Band-pass the whole recording once per band, then measure every frame."""
    if abs(rec.fs - dsp.fs) > 1e-9 * dsp.fs:
        dsp = replace(dsp, fs=float(rec.fs))
    tone_all = bandpass_zero_phase(rec, dsp.tone_band)
    delay_all = tone_all if dsp.narrowband else bandpass_zero_phase(rec, dsp.delay_band)
    win = max(dsp.fdoa_window, dsp.tdoa_window)
    times = frame_times(rec, rate, win, t_track[0], t_track[-1])
    track = TdoaTrack(1.0 / dsp.f0) if dsp.narrowband else None
    frames = []
    for tk in times:
        p_m, v_m = interpolate_track(t_track, p_track, v_track, tk)
        rx = ReceiverPair(anchor, p_m, v_m)
        frames.append(
            measure_frame(
                delay_all.window(tk, dsp.tdoa_window), tone_all.window(tk, dsp.fdoa_window), rx, dsp,
                t=float(tk), track=track, prefiltered=True,
            )
        )
    return times, frames

