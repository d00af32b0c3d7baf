"""INI-style scenario configuration.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` or ``;``
start a comment line. Sections are ``[source]``, ``[receiver]``, ``[noise]``,
``[filter]``, ``[initializer]`` and ``[run]``. ``source.motion`` and
``initializer.method`` may hold comma-separated lists, which expand into a
sweep over every (motion, initializer) pair. Unknown sections or keys are
errors.
"""

from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .channel import NoiseSpec
from .pipeline import DspConfig
from .harness import (
    INITIALIZERS,
    RECEIVER_PATHS,
    SOURCE_MOTIONS,
    THRESHOLDS,
    FilterConfig,
    ReceiverParams,
    ScenarioConfig,
    SourceParams,
)
from .initializers import Bounds, LcMapConfig, PriorSpec
from .motion import Model, ProcessNoiseSpec
from .ukf import UtParams

SEED_ENV = "HYDROTRACK_SEED"
FILTER_MODELS = ("auto",) + tuple(m.value for m in Model)


class ConfigError(ValueError):
    """Any problem with a configuration file; ``line`` is set when known."""

    def __init__(self, msg: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        super().__init__(f"line {line}: {msg}" if line else msg)


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    kind: str  # float | int | vec3 | floats | optfloat | optpair | choice
    default: object
    help: str
    check: object = None  # predicate on the parsed value
    rule: str = ""
    choices: tuple = ()


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


_D_SRC, _D_RX, _D_NOISE = SourceParams(), ReceiverParams(), NoiseSpec()
_D_SC, _D_FC, _D_LC = ScenarioConfig(), FilterConfig(), LcMapConfig()
_D_UT, _D_PN, _D_PR = UtParams(), ProcessNoiseSpec(), PriorSpec()
_D_DSP = DspConfig()
_DSP_FIELDS = ("fs", "c", "f0", "tone_half_width", "probe_band", "probe_tones", "tdoa_window", "fdoa_window", "n_blocks", "rel_threshold")

KEYS = [
    Key("source", "motion", "choice", _D_SC.source_motion, "source motion (list allowed)", choices=SOURCE_MOTIONS),
    Key("source", "speed", "float", _D_SRC.speed, "initial speed, m/s", _nonneg, ">= 0"),
    Key("source", "accel", "float", _D_SRC.accel, "along-track acceleration (ca), m/s^2"),
    Key("source", "turn_rate", "float", _D_SRC.turn_rate, "turn rate (turn), rad/s"),
    Key("source", "arc_turn_rate", "float", _D_SRC.arc_turn_rate, "turn rate (arc), rad/s"),
    Key("source", "v_z", "float", _D_SRC.v_z, "vertical speed, m/s"),
    Key("source", "u_leg", "float", _D_SRC.u_leg, "straight leg length (u_shape), m", _pos, "> 0"),
    Key("source", "u_radius", "float", _D_SRC.u_radius, "turn radius (u_shape), m", _pos, "> 0"),
    Key("source", "init_radius", "float", _D_SC.init_radius, "start sampling radius about the anchor, m", _pos, "> 0"),
    Key("source", "keepout", "float", _D_SC.keepout, "no-start radius around receivers, m", _nonneg, ">= 0"),
    Key("source", "surface_z", "optfloat", _D_SC.surface_z, "starts above this depth are rejected (none = off)"),
    Key("receiver", "path", "choice", _D_SC.receiver_path, "mobile receiver path", choices=RECEIVER_PATHS),
    Key("receiver", "anchor", "vec3", _D_SC.anchor_pose, "fixed hydrophone position x, y, z in m"),
    Key("receiver", "radius", "float", _D_RX.radius, "helix/circle radius, m", _pos, "> 0"),
    Key("receiver", "period", "float", _D_RX.period, "helix/circle/spiral/square period, s", _pos, "> 0"),
    Key("receiver", "pitch", "float", _D_RX.pitch, "helix rise per revolution, m"),
    Key("receiver", "z_offset", "float", _D_RX.z_offset, "path depth offset from the anchor, m"),
    Key("receiver", "side", "float", _D_RX.side, "square side, m", _pos, "> 0"),
    Key("receiver", "spiral_r0", "float", _D_RX.spiral_r0, "spiral start radius, m", _nonneg, ">= 0"),
    Key("receiver", "spiral_growth", "float", _D_RX.spiral_growth, "spiral radial speed, m/s"),
    Key("receiver", "lane_length", "float", _D_RX.lane_length, "lawnmower lane length, m", _pos, "> 0"),
    Key("receiver", "lane_spacing", "float", _D_RX.lane_spacing, "lawnmower lane spacing, m", _pos, "> 0"),
    Key("receiver", "lanes", "int", _D_RX.lanes, "lawnmower lane count", lambda x: x >= 2, ">= 2"),
    Key("receiver", "speed", "float", _D_RX.speed, "lawnmower speed, m/s", _pos, "> 0"),
    Key("receiver", "fs", "float", _D_DSP.fs, "waveform sample rate, Hz", _pos, "> 0"),
    Key("receiver", "c", "float", _D_DSP.c, "sound speed, m/s", _pos, "> 0"),
    Key("receiver", "f0", "float", _D_DSP.f0, "source tone frequency, Hz", _pos, "> 0"),
    Key("receiver", "tone_half_width", "float", _D_DSP.tone_half_width, "tone band half width, Hz", _pos, "> 0"),
    Key("receiver", "probe_band", "optpair", _D_DSP.probe_band, "wideband probe band lo, hi in Hz (none = narrowband)"),
    Key("receiver", "probe_tones", "int", _D_DSP.probe_tones, "tones in the wideband probe", _pos, ">= 1"),
    Key("receiver", "tdoa_window", "float", _D_DSP.tdoa_window, "delay analysis window, s", _pos, "> 0"),
    Key("receiver", "fdoa_window", "float", _D_DSP.fdoa_window, "Doppler analysis window, s", _pos, "> 0"),
    Key("receiver", "n_blocks", "int", _D_DSP.n_blocks, "sub-blocks for the FDOA phase fit", lambda x: x >= 2, ">= 2"),
    Key("receiver", "rel_threshold", "float", _D_DSP.rel_threshold, "cross-spectral bin threshold", lambda x: 0 < x < 1, "in (0, 1)"),
    Key("noise", "sigma_rd", "float", _D_NOISE.sigma_rd, "RD noise std, m", _nonneg, ">= 0"),
    Key("noise", "sigma_rrd", "float", _D_NOISE.sigma_rrd, "RRD noise std, m/s", _nonneg, ">= 0"),
    Key("noise", "awgn_snr_db", "optfloat", _D_NOISE.awgn_snr_db, "waveform-mode SNR, dB (none = noiseless)"),
    Key("noise", "seed", "int", _D_NOISE.seed, "waveform probe seed"),
    Key("filter", "model", "choice", _D_FC.model, "motion model (auto picks from the source motion)", choices=FILTER_MODELS),
    Key("filter", "alpha", "float", _D_UT.alpha, "UT spread", lambda x: 0 < x <= 1, "in (0, 1]"),
    Key("filter", "beta", "float", _D_UT.beta, "UT prior-shape weight", _nonneg, ">= 0"),
    Key("filter", "kappa", "optfloat", _D_UT.kappa, "UT secondary scaling (none = 3 - n)"),
    Key("filter", "accel_psd", "optfloat", _D_PN.accel_psd, "process noise intensity per axis (none = per-model default)", _nonneg, ">= 0"),
    Key("filter", "bias_rw_p", "float", _D_PN.bias_rw_p, "RD bias random walk", _nonneg, ">= 0"),
    Key("filter", "bias_rw_v", "float", _D_PN.bias_rw_v, "RRD bias random walk", _nonneg, ">= 0"),
    Key("filter", "turn_rw", "float", _D_PN.turn_rw, "turn-rate random walk (ctrv)", _nonneg, ">= 0"),
    Key("filter", "pos_std", "float", _D_PR.pos_std, "initial position std, m", _pos, "> 0"),
    Key("filter", "vel_std", "float", _D_PR.vel_std, "initial velocity std, m/s", _pos, "> 0"),
    Key("filter", "bias_p_std", "float", _D_PR.bias_p_std, "initial RD bias std, m", _pos, "> 0"),
    Key("filter", "bias_v_std", "float", _D_PR.bias_v_std, "initial RRD bias std, m/s", _pos, "> 0"),
    Key("filter", "accel_std", "float", _D_PR.accel_std, "initial acceleration std (ca), m/s^2", _pos, "> 0"),
    Key("filter", "turn_std", "float", _D_PR.turn_std, "initial turn-rate std (ctrv), rad/s", _pos, "> 0"),
    Key("filter", "gate", "optfloat", _D_FC.gate, "Mahalanobis gate (none = off)", lambda x: x is None or x > 0, "> 0"),
    Key("filter", "r_mode", "choice", _D_FC.r_mode, "outlier handling", choices=("gate", "inflate")),
    Key("filter", "max_consecutive_gated", "int", _D_FC.max_consecutive_gated, "gate bypass after this many rejections", _pos, "> 0"),
    Key("filter", "z_max", "optfloat", _D_FC.z_max, "surface clamp on the estimate (none = off)"),
    Key("filter", "bank_window", "float", _D_FC.bank_window, "time competing initial hypotheses run, s", _nonneg, ">= 0"),
    Key("filter", "bank_clip", "float", _D_FC.bank_clip, "innovation clip for hypothesis scoring", _pos, "> 0"),
    Key("initializer", "method", "choice", _D_SC.initializer, "initializer (list allowed)", choices=INITIALIZERS),
    Key("initializer", "burst_len", "int", _D_SC.burst_len, "frames in the initialization burst", _pos, ">= 1"),
    Key("initializer", "m_pos", "int", _D_LC.M_pos, "LC-MAP locus samples", _pos, ">= 1"),
    Key("initializer", "m_vel", "int", _D_LC.M_vel, "LC-MAP velocity samples per position", _pos, ">= 1"),
    Key("initializer", "lambda", "float", _D_LC.lam, "LC-MAP log-det weight", _nonneg, ">= 0"),
    Key("initializer", "eps_fim", "float", _D_LC.eps_fim, "FIM jitter", _pos, "> 0"),
    Key("initializer", "bound_radius", "float", _D_LC.bounds.radius, "search radius about the anchor, m", _pos, "> 0"),
    Key("initializer", "z_min", "float", _D_LC.bounds.z_min, "search depth floor, m"),
    Key("initializer", "z_max", "float", _D_LC.bounds.z_max, "search depth ceiling, m"),
    Key("initializer", "v_max", "float", _D_LC.v_max, "velocity bound, m/s", _pos, "> 0"),
    Key("initializer", "polish_steps", "int", _D_LC.polish_steps, "Gauss-Newton polish steps", lambda x: 0 <= x <= 10, "in [0, 10]"),
    Key("initializer", "trust_radius", "float", _D_LC.trust_radius, "polish trust radius, m", _pos, "> 0"),
    Key("initializer", "top_fraction", "float", _D_LC.top_fraction, "candidates used for the P0 spread", lambda x: 0 < x <= 1, "in (0, 1]"),
    Key("initializer", "floor_pos_std", "optfloat", _D_LC.floor_pos_std, "LC-MAP P0 position std floor, m (none = filter.pos_std)"),
    Key("initializer", "n_hypotheses", "int", _D_LC.n_hypotheses, "LC-MAP modes handed to the filter", _pos, ">= 1"),
    Key("initializer", "min_separation", "float", _D_LC.min_separation, "minimum spacing of those modes, m", _nonneg, ">= 0"),
    Key("initializer", "floor_vel_std", "optfloat", _D_LC.floor_vel_std, "LC-MAP P0 velocity std floor, m/s (none = filter.vel_std)"),
    Key("run", "meas_rate", "float", _D_SC.meas_rate, "measurement rate, Hz", _pos, "> 0"),
    Key("run", "duration", "float", _D_SC.duration, "trial length, s", _pos, "> 0"),
    Key("run", "seed", "int", _D_SC.seed, f"master seed (overridden by ${SEED_ENV}, then by --seed)"),
    Key("run", "dwell", "float", _D_SC.dwell, "time the error must stay below a threshold, s", _nonneg, ">= 0"),
    Key("run", "thresholds", "floats", _D_SC.thresholds, "success thresholds, m"),
    Key("run", "final_window", "float", _D_SC.final_window, "final RMSE window, s", _pos, "> 0"),
]
_BY_NAME = {(k.section, k.name): k for k in KEYS}
SECTIONS = tuple(dict.fromkeys(k.section for k in KEYS))
LIST_KEYS = {("source", "motion"), ("initializer", "method")}


# where each key lives on a ScenarioConfig
_PATHS = {
    ("source", "motion"): "source_motion",
    **{("source", f): f"source.{f}" for f in ("speed", "accel", "turn_rate", "arc_turn_rate", "v_z", "u_leg", "u_radius")},
    ("source", "init_radius"): "init_radius",
    ("source", "keepout"): "keepout",
    ("source", "surface_z"): "surface_z",
    ("receiver", "path"): "receiver_path",
    ("receiver", "anchor"): "anchor_pose",
    **{
        ("receiver", f): f"receiver.{f}"
        for f in ("radius", "period", "pitch", "z_offset", "side", "spiral_r0", "spiral_growth", "lane_length", "lane_spacing", "lanes", "speed")
    },
    **{("receiver", f): f"dsp.{f}" for f in _DSP_FIELDS},
    **{("noise", f): f"noise.{f}" for f in ("sigma_rd", "sigma_rrd", "awgn_snr_db", "seed")},
    ("filter", "model"): "filter.model",
    **{("filter", f): f"filter.ut.{f}" for f in ("alpha", "beta", "kappa")},
    **{("filter", f): f"filter.process.{f}" for f in ("accel_psd", "bias_rw_p", "bias_rw_v", "turn_rw")},
    **{("filter", f): f"filter.prior.{f}" for f in ("pos_std", "vel_std", "bias_p_std", "bias_v_std", "accel_std", "turn_std")},
    **{("filter", f): f"filter.{f}" for f in ("gate", "r_mode", "max_consecutive_gated", "z_max", "bank_window", "bank_clip")},
    ("initializer", "method"): "initializer",
    ("initializer", "burst_len"): "burst_len",
    ("initializer", "m_pos"): "lcmap.M_pos",
    ("initializer", "m_vel"): "lcmap.M_vel",
    ("initializer", "lambda"): "lcmap.lam",
    ("initializer", "bound_radius"): "lcmap.bounds.radius",
    ("initializer", "z_min"): "lcmap.bounds.z_min",
    ("initializer", "z_max"): "lcmap.bounds.z_max",
    **{
        ("initializer", f): f"lcmap.{f}"
        for f in (
            "eps_fim", "v_max", "polish_steps", "trust_radius", "top_fraction", "floor_pos_std", "floor_vel_std",
            "n_hypotheses", "min_separation",
        )
    },
    **{("run", f): f for f in ("meas_rate", "duration", "seed", "dwell", "thresholds", "final_window")},
}


def _get(cfg, path: str):
    for part in path.split("."):
        cfg = getattr(cfg, part)
    return cfg


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return "inf" if v == math.inf else "-inf" if v == -math.inf else repr(v)
    return str(v)


def dump_config(cfg: ScenarioConfig, motions=None, methods=None) -> str:
    """Full config text that parses back to ``cfg``.

    ``motions``/``methods`` write list values, so a sweep round-trips through
    :func:`parse_sweep`.
    """
    lists = {("source", "motion"): motions, ("initializer", "method"): methods}
    out = []
    for sec in SECTIONS:
        out.append(f"[{sec}]")
        for k in KEYS:
            if k.section != sec:
                continue
            items = lists.get((sec, k.name))
            val = ", ".join(items) if items else _fmt(_get(cfg, _PATHS[(sec, k.name)]))
            out.append(f"{k.name} = {val}")
        out.append("")
    return "\n".join(out)


def dump_sweep(cfgs: list[ScenarioConfig]) -> str:
    motions = tuple(dict.fromkeys(c.source_motion for c in cfgs))
    methods = tuple(dict.fromkeys(c.initializer for c in cfgs))
    return dump_config(cfgs[0], motions, methods)


def defaults_reference() -> str:
    """Every key with its default, as a valid config file."""
    out = ["# hydrotrack configuration reference (all defaults)"]
    for sec in SECTIONS:
        out.append(f"\n[{sec}]")
        for k in KEYS:
            if k.section != sec:
                continue
            note = k.help
            if k.choices:
                note += f"; one of {', '.join(k.choices)}"
            if k.rule:
                note += f"; {k.rule}"
            out.append(f"# {note}")
            out.append(f"{k.name} = {_fmt(k.default)}")
    return "\n".join(out) + "\n"


def _parse_value(key: Key, raw: str, line: int | None):
    raw = raw.strip()
    where = f"{key.section}.{key.name}"
    try:
        if key.kind == "float":
            v = float(raw)
        elif key.kind == "int":
            v = int(raw)
        elif key.kind == "optfloat":
            v = None if raw.lower() == "none" else float(raw)
        elif key.kind == "vec3":
            v = tuple(float(x) for x in raw.split(","))
            if len(v) != 3:
                raise ValueError("expected three comma-separated numbers")
        elif key.kind == "optpair":
            v = None if raw.lower() == "none" else tuple(float(x) for x in raw.split(","))
            if v is not None and (len(v) != 2 or not 0 < v[0] < v[1]):
                raise ValueError("expected 'none' or two increasing positive numbers")
        elif key.kind == "floats":
            v = tuple(float(x) for x in raw.split(","))
        elif key.kind == "choice":
            v = raw
        else:  # pragma: no cover
            raise AssertionError(key.kind)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})", line, key.name) from None
    if key.kind == "choice" and v not in key.choices:
        raise ConfigError(f"{where}: {v!r} is not one of {', '.join(key.choices)}", line, key.name)
    if key.check is not None and v is not None and not key.check(v):
        raise ConfigError(f"{key.name} = {raw} out of range ({key.rule})", line, key.name)
    return v


def _line_index(text: str):
    """(section, key) -> 1-based line number of its first occurrence."""
    index, sec = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            sec = m.group(1).strip()
            index.setdefault((sec, None), no)
        elif s and s[0] not in "#;" and sec is not None:
            name = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            index.setdefault((sec, name), no)
    return index


def read_values(text: str) -> dict:
    """Parse config text into ``{(section, key): value}`` with list keys as tuples."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None, default_section="__none__")
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    lines = _line_index(text)
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)))
        for name, raw in cp.items(sec):
            line = lines.get((sec, name))
            key = _BY_NAME.get((sec, name))
            if key is None:
                raise ConfigError(f"unknown key {name!r} in [{sec}]", line, name)
            if (sec, name) in LIST_KEYS:
                items = [x.strip() for x in raw.split(",") if x.strip()]
                if not items:
                    raise ConfigError(f"{sec}.{name}: empty list", line, name)
                values[(sec, name)] = tuple(_parse_value(key, x, line) for x in items)
            else:
                values[(sec, name)] = _parse_value(key, raw, line)
    return values


def resolve_seed(config_seed: int, flag: int | None = None, env: dict | None = None) -> int:
    """Precedence: command-line flag, then ``$HYDROTRACK_SEED``, then the config file."""
    if flag is not None:
        return int(flag)
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV)
    if raw not in (None, ""):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer", field="seed") from None
    return int(config_seed)


def build(values: dict, motion: str | None = None, method: str | None = None) -> ScenarioConfig:
    def g(sec, name):
        if (sec, name) in values:
            return values[(sec, name)]
        return _BY_NAME[(sec, name)].default

    def first(sec, name):
        v = g(sec, name)
        return v[0] if isinstance(v, tuple) else v

    motion = motion or first("source", "motion")
    method = method or first("initializer", "method")
    src = SourceParams(**{f: g("source", f) for f in ("speed", "accel", "turn_rate", "arc_turn_rate", "v_z", "u_leg", "u_radius")})
    rx = ReceiverParams(
        **{
            f: g("receiver", f)
            for f in ("radius", "period", "pitch", "z_offset", "side", "spiral_r0", "spiral_growth", "lane_length", "lane_spacing", "lanes", "speed")
        }
    )
    noise = NoiseSpec(g("noise", "sigma_rd"), g("noise", "sigma_rrd"), g("noise", "awgn_snr_db"), g("noise", "seed"))
    filt = FilterConfig(
        model=g("filter", "model"),
        ut=UtParams(g("filter", "alpha"), g("filter", "beta"), g("filter", "kappa")),
        process=ProcessNoiseSpec(g("filter", "accel_psd"), g("filter", "bias_rw_p"), g("filter", "bias_rw_v"), g("filter", "turn_rw")),
        prior=PriorSpec(*(g("filter", f) for f in ("pos_std", "vel_std", "bias_p_std", "bias_v_std", "accel_std", "turn_std"))),
        gate=g("filter", "gate"),
        r_mode=g("filter", "r_mode"),
        max_consecutive_gated=g("filter", "max_consecutive_gated"),
        z_max=g("filter", "z_max"),
        bank_window=g("filter", "bank_window"),
        bank_clip=g("filter", "bank_clip"),
    )
    if g("initializer", "z_min") >= g("initializer", "z_max"):
        raise ConfigError("initializer.z_min must be below initializer.z_max", field="z_min")
    lc = LcMapConfig(
        M_pos=g("initializer", "m_pos"),
        M_vel=g("initializer", "m_vel"),
        lam=g("initializer", "lambda"),
        eps_fim=g("initializer", "eps_fim"),
        bounds=Bounds(g("initializer", "bound_radius"), g("initializer", "z_min"), g("initializer", "z_max")),
        v_max=g("initializer", "v_max"),
        polish_steps=g("initializer", "polish_steps"),
        trust_radius=g("initializer", "trust_radius"),
        top_fraction=g("initializer", "top_fraction"),
        floor_pos_std=g("initializer", "floor_pos_std"),
        floor_vel_std=g("initializer", "floor_vel_std"),
        n_hypotheses=g("initializer", "n_hypotheses"),
        min_separation=g("initializer", "min_separation"),
    )
    th = tuple(sorted(g("run", "thresholds")))
    if not th or any(x <= 0 for x in th):
        raise ConfigError("thresholds must be positive", field="thresholds")
    try:
        return ScenarioConfig(
            source_motion=motion,
            source=src,
            receiver_path=g("receiver", "path"),
            receiver=rx,
            anchor_pose=g("receiver", "anchor"),
            meas_rate=g("run", "meas_rate"),
            duration=g("run", "duration"),
            init_radius=g("source", "init_radius"),
            keepout=g("source", "keepout"),
            surface_z=g("source", "surface_z"),
            noise=noise,
            dsp=DspConfig(**{f: g("receiver", f) for f in _DSP_FIELDS}),
            initializer=method,
            burst_len=g("initializer", "burst_len"),
            lcmap=lc,
            filter=filt,
            dwell=g("run", "dwell"),
            thresholds=th,
            final_window=g("run", "final_window"),
            seed=g("run", "seed"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def parse_config(path) -> ScenarioConfig:
    """Single scenario; for a sweep file this is the first (motion, initializer) cell."""
    return build(read_values(_read(path)))


def parse_sweep(path) -> list[ScenarioConfig]:
    """One config per (motion, initializer) pair, motions outermost."""
    values = read_values(_read(path))
    motions = values.get(("source", "motion"), (_D_SC.source_motion,))
    methods = values.get(("initializer", "method"), (_D_SC.initializer,))
    base = build(values, motions[0], methods[0])
    return [replace(base, source_motion=m, initializer=i) for m in motions for i in methods]


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(cfg, seed=int(seed))


__all__ = [
    "ConfigError",
    "KEYS",
    "SEED_ENV",
    "THRESHOLDS",
    "build",
    "defaults_reference",
    "dump_config",
    "dump_sweep",
    "parse_config",
    "parse_sweep",
    "read_values",
    "resolve_seed",
    "with_seed",
]
