"""Scenario-to-observation synthesis: direct noisy RD/RRD, or two-channel waveforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import DspError, SampledFrame
from .geometry import AcousticConstants, ReceiverPair, SourceKinematics, predict_measurement

D_REF = 0.1


class AliasingError(DspError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    sigma_rd: float = 0.1
    sigma_rrd: float = 0.05
    awgn_snr_db: float | None = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_rd < 0 or self.sigma_rrd < 0:
            raise ValueError("noise sigmas must be nonnegative")


@dataclass(frozen=True)
class MeasurementFrame:
    t: float
    rd: float
    rrd: float
    rx: ReceiverPair
    quality: float = 1.0

    def __post_init__(self):
        if not 0 < self.quality <= 1:
            raise ValueError("quality must lie in (0, 1]")


def simulate_measurement(
    src: SourceKinematics, rx: ReceiverPair, noise: NoiseSpec, rng: np.random.Generator, t: float = 0.0
) -> MeasurementFrame:
    rd, rrd = predict_measurement(src, rx)
    e = rng.standard_normal(2)
    return MeasurementFrame(t, rd + noise.sigma_rd * e[0], rrd + noise.sigma_rrd * e[1], rx)


def _radial(src: SourceKinematics, p: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    d = src.p_s - p
    r = float(np.linalg.norm(d))
    return r, float((src.v_s - v) @ d / r)


def synthesize_waveforms(
    src: SourceKinematics,
    rx: ReceiverPair,
    k: AcousticConstants,
    noise: NoiseSpec,
    fs: float,
    duration: float,
    *,
    t_center: float = 0.0,
    waveform: str = "tone",
    probe_band: tuple[float, float] = (2_000.0, 20_000.0),
    probe_tones: int = 256,
    rng: np.random.Generator | None = None,
) -> SampledFrame:
    """Render the two hydrophone channels for one frame centred on ``t_center``.

    Kinematics are frozen at the frame centre: each channel sees the source
    signal delayed by ``d_i / c`` and time-scaled by ``1 - rdot_i / c`` (which
    scales a tone's frequency by the same factor), attenuated by
    ``1 / max(d_i, D_REF)``. ``waveform="wideband"`` emits a noise-like sum of
    ``probe_tones`` random-frequency tones in ``probe_band``; unlike a chirp its
    correlation peak is not shifted by Doppler, so it probes delay without
    ambiguity. If ``noise.awgn_snr_db`` is
    set, white Gaussian noise is added per channel at that SNR.
    """
    if waveform == "tone":
        f_max = k.f0
    elif waveform == "wideband":
        f_max = max(probe_band)
        probe_rng = np.random.default_rng([noise.seed, 0x9E37])
        probe_f = probe_rng.uniform(*probe_band, probe_tones)
        probe_ph = probe_rng.uniform(0, 2 * np.pi, probe_tones)
    else:
        raise ValueError(f"unknown waveform {waveform!r}")
    n = int(round(duration * fs))
    if n < 2:
        raise DspError("duration shorter than two samples")
    chans = []
    for p, v in ((rx.p_f, np.zeros(3)), (rx.p_m, rx.v_m)):
        d, rdot = _radial(src, p, v)
        if f_max * (1 + abs(rdot) / k.c) >= fs / 2:
            raise AliasingError(f"Doppler-shifted content at {f_max * (1 + abs(rdot) / k.c):.1f} Hz aliases at fs={fs}")
        chans.append((d, rdot))
    rng = np.random.default_rng(noise.seed) if rng is None else rng
    t0 = t_center - (n // 2) / fs
    u = t0 + np.arange(n) / fs - t_center
    out = []
    for d, rdot in chans:
        # emission time relative to frame centre
        e = (1 - rdot / k.c) * u - d / k.c
        if waveform == "tone":
            x = np.sin(2 * np.pi * k.f0 * (e + t_center))
        else:
            x = np.zeros(n)
            for i in range(0, probe_tones, 16):
                f, ph = probe_f[i : i + 16, None], probe_ph[i : i + 16, None]
                x += np.sin(2 * np.pi * f * (e + t_center) + ph).sum(axis=0)
            x *= np.sqrt(2.0 / probe_tones)
        x = x / max(d, D_REF)
        if noise.awgn_snr_db is not None:
            p_sig = float(np.mean(x * x))
            sigma = np.sqrt(p_sig / 10 ** (noise.awgn_snr_db / 10))
            x = x + sigma * rng.standard_normal(n)
        out.append(x)
    return SampledFrame(out[0], out[1], fs, t0)
