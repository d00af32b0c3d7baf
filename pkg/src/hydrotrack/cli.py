"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input-format error, 3 filter
divergence (outputs are still written).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build, defaults_reference, dump_config, dump_sweep, parse_config, parse_sweep, resolve_seed
from .dsp import DspError, WavFormatError, read_wav, write_wav
from .fileio import (
    TrackFormatError,
    read_track_csv,
    write_estimate_csv,
    write_manifest,
    write_summary_csv,
    write_summary_json,
    write_track_csv,
    write_trial_csv,
)
from .harness import run_recording, run_sweep, run_trial, scenario_paths, trial_seed
from .pipeline import synthesize_recording

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3


class InputError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _load(config_path, seed_flag):
    cfg = parse_config(config_path)
    return replace(cfg, seed=resolve_seed(cfg.seed, seed_flag))


def cmd_simulate(config_path, out_dir, seed: int | None = None) -> int:
    started = _now()
    cfg = _load(config_path, seed)
    out = _out_dir(out_dir)
    result = run_trial(cfg, trial_seed(cfg.seed, 0))
    write_trial_csv(out / "trial.csv", result)
    write_manifest(
        out / "manifest.json", config_text=dump_config(cfg), seed=cfg.seed, version=__version__,
        started=started, finished=_now(), outputs=["trial.csv", "manifest.json"],
        extra={"command": "simulate", "diverged": result.diverged},
    )
    if result.diverged:
        print("filter diverged; partial results written", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_montecarlo(config_path, out_dir, trials: int, parallel: int = 1, keep_trials: bool = False, seed=None) -> int:
    started = _now()
    if trials < 1:
        raise InputError(f"--trials must be >= 1, got {trials}")
    if parallel < 1:
        raise InputError(f"--parallel must be >= 1, got {parallel}")
    cfgs = parse_sweep(config_path)
    master = resolve_seed(cfgs[0].seed, seed)
    cfgs = [replace(c, seed=master) for c in cfgs]
    out = _out_dir(out_dir)
    kept: list = []
    stats = run_sweep(cfgs, trials, parallel, keep=kept)
    outputs = ["summary.csv", "summary.json", "manifest.json"]
    write_summary_csv(out / "summary.csv", stats)
    write_summary_json(out / "summary.json", stats)
    if keep_trials:
        (out / "trials").mkdir(exist_ok=True)
        for c, results in zip(cfgs, kept):
            for i, r in enumerate(results):
                name = f"trials/{c.source_motion}_{c.initializer}_{i:04d}.csv"
                write_trial_csv(out / name, r)
                outputs.append(name)
    write_manifest(
        out / "manifest.json", config_text=dump_sweep(cfgs), seed=master, version=__version__,
        started=started, finished=_now(), outputs=outputs,
        extra={"command": "montecarlo", "trials": trials},
    )
    return EXIT_OK


def cmd_estimate(wav_path, track_path, out_dir, config_path=None, anchor=None, seed=None) -> int:
    started = _now()
    if config_path:
        cfg = _load(config_path, seed)
    else:
        cfg = build({})
        cfg = replace(cfg, seed=resolve_seed(cfg.seed, seed))
    if anchor is not None:
        cfg = replace(cfg, anchor_pose=tuple(anchor))
    rec = read_wav(wav_path)
    t_tr, p_tr, v_tr = read_track_csv(track_path)
    out = _out_dir(out_dir)
    res = run_recording(cfg, rec, t_tr, p_tr, v_tr)
    write_estimate_csv(out / "trial.csv", res.times, res.run.estimate, res.run.bias, res.run.gated)
    write_manifest(
        out / "manifest.json", config_text=dump_config(cfg), seed=cfg.seed, version=__version__,
        started=started, finished=_now(), outputs=["trial.csv", "manifest.json"],
        extra={"command": "estimate", "wav": Path(wav_path).name, "track": Path(track_path).name,
               "frames": len(res.frames), "diverged": res.run.diverged},
    )
    if res.run.diverged:
        print("filter diverged; partial results written", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_synth(config_path, out_dir, duration: float | None = None, seed=None, track_rate: float = 50.0) -> int:
    """Render a two-channel recording of one trial plus its mobile-receiver and source tracks."""
    started = _now()
    cfg = _load(config_path, seed)
    T = cfg.duration if duration is None else float(duration)
    if not T > 0:
        raise InputError("--duration must be positive")
    out = _out_dir(out_dir)
    source, mobile = scenario_paths(cfg, trial_seed(cfg.seed, 0))
    rec = synthesize_recording(source, cfg.anchor, mobile, 0.0, T, cfg.noise, cfg.dsp)
    write_wav(out / "recording.wav", rec)
    t = np.arange(int(np.floor(T * track_rate)) + 1) / track_rate
    pv = [mobile(x) for x in t]
    write_track_csv(out / "mobile_track.csv", t, np.array([a for a, _ in pv]), np.array([b for _, b in pv]))
    src = [source(x) for x in t]
    write_track_csv(out / "source_truth.csv", t, np.array([s.p_s for s in src]), np.array([s.v_s for s in src]))
    outputs = ["recording.wav", "mobile_track.csv", "source_truth.csv", "manifest.json"]
    write_manifest(
        out / "manifest.json", config_text=dump_config(cfg), seed=cfg.seed, version=__version__,
        started=started, finished=_now(), outputs=outputs, extra={"command": "synth", "duration_s": T},
    )
    return EXIT_OK


def _vec3(text: str):
    try:
        v = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected x,y,z") from None
    if len(v) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydrotrack", description="TDOA/FDOA acoustic source tracking")
    p.add_argument("--version", action="version", version=f"hydrotrack {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one seeded trial, write trial.csv")
    s.add_argument("config")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int)

    m = sub.add_parser("montecarlo", help="run a (motion x initializer) sweep, write summaries")
    m.add_argument("config")
    m.add_argument("out_dir")
    m.add_argument("--trials", type=int, required=True)
    m.add_argument("--parallel", type=int, default=1)
    m.add_argument("--keep-trials", action="store_true")
    m.add_argument("--seed", type=int)

    e = sub.add_parser("estimate", help="track a source from a two-channel WAV recording")
    e.add_argument("wav")
    e.add_argument("track", help="mobile receiver CSV: t_s,px,py,pz,vx,vy,vz")
    e.add_argument("out_dir")
    e.add_argument("--config")
    e.add_argument("--anchor", type=_vec3, help="fixed hydrophone x,y,z (default from config)")
    e.add_argument("--seed", type=int)

    y = sub.add_parser("synth", help="render a WAV recording and tracks for one trial")
    y.add_argument("config")
    y.add_argument("out_dir")
    y.add_argument("--duration", type=float)
    y.add_argument("--seed", type=int)

    sub.add_parser("config-reference", help="print every config key with its default")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out_dir, args.seed)
        if args.command == "montecarlo":
            return cmd_montecarlo(args.config, args.out_dir, args.trials, args.parallel, args.keep_trials, args.seed)
        if args.command == "estimate":
            return cmd_estimate(args.wav, args.track, args.out_dir, args.config, args.anchor, args.seed)
        if args.command == "synth":
            return cmd_synth(args.config, args.out_dir, args.duration, args.seed)
        sys.stdout.write(defaults_reference())
        return EXIT_OK
    except (ConfigError, WavFormatError, TrackFormatError, DspError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
