"""Result files: trial CSV, batch summaries, run manifest, mobile track CSV."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .harness import SummaryStats, TrialResult

TRIAL_HEADER = (
    "t_s,px,py,pz,vx,vy,vz,est_px,est_py,est_pz,est_vx,est_vy,est_vz,b_p,b_v,err_m,gated"
)
ESTIMATE_HEADER = TRIAL_HEADER.replace(",err_m", "")
SUMMARY_HEADER = (
    "source_motion,initializer,threshold_m,success_rate,n_trials,n_converged,"
    "mean_convergence_s,median_convergence_s,rmse_final_mean_m,rmse_final_median_m,"
    "rmse_final_p95_m,n_diverged"
)
TRACK_COLUMNS = ("t_s", "px", "py", "pz", "vx", "vy", "vz")


class TrackFormatError(ValueError):
    def __init__(self, field: str, msg: str):
        self.field = field
        super().__init__(f"{field}: {msg}")


def fmt(x) -> str:
    """Nine significant digits; empty for missing values."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    if x == 0:
        return "0"
    return f"{x:.9g}"


def _round(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else float(fmt(obj)) if math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def _write(path, text: str):
    # newline="" keeps '\n' line endings on every platform
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(text)


def trial_rows(t, est, bias, gated, truth=None, err=None, with_err: bool = True):
    n = len(t)
    lines = [TRIAL_HEADER if with_err else ESTIMATE_HEADER]
    for k in range(n):
        tr = [""] * 6 if truth is None else [fmt(x) for x in truth[k]]
        row = [fmt(t[k]), *tr, *(fmt(x) for x in est[k]), fmt(bias[k, 0]), fmt(bias[k, 1])]
        if with_err:
            row.append("" if err is None else fmt(err[k]))
        row.append("1" if gated[k] else "0")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_trial_csv(path, result: TrialResult):
    _write(path, trial_rows(result.t, result.estimate, result.bias, result.gated, result.truth, result.error))


def write_estimate_csv(path, t, est, bias, gated):
    """Field-mode track: truth columns left empty, no ``err_m`` column."""
    _write(path, trial_rows(t, est, bias, gated, with_err=False))


def summary_rows(stats: SummaryStats):
    lines = [SUMMARY_HEADER]
    for c in stats.cells:
        for th in stats.thresholds:
            row = [
                c.source_motion,
                c.initializer,
                fmt(th),
                fmt(c.success_rate[th]),
                str(c.n_trials),
                str(c.n_converged),
                fmt(c.mean_convergence_time),
                fmt(c.median_convergence_time),
                fmt(c.rmse_final_mean),
                fmt(c.rmse_final_median),
                fmt(c.rmse_final_p95),
                str(c.n_diverged),
            ]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_summary_csv(path, stats: SummaryStats):
    _write(path, summary_rows(stats))


def dumps_json(obj) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_summary_json(path, stats: SummaryStats):
    _write(path, dumps_json(stats.to_dict()))


def write_manifest(path, *, config_text: str, seed: int, version: str, started: str, finished: str, outputs, extra=None):
    doc = {
        "config": config_text,
        "master_seed": int(seed),
        "tool_version": version,
        "started_utc": started,
        "finished_utc": finished,
        "outputs": sorted(Path(p).as_posix() for p in outputs),  # relative to the output directory
    }
    if extra:
        doc.update(extra)
    _write(path, dumps_json(doc))


def track_rows(t, p, v) -> str:
    lines = [",".join(TRACK_COLUMNS)]
    for k in range(len(t)):
        lines.append(",".join(fmt(x) for x in (t[k], *p[k], *v[k])))
    return "\n".join(lines) + "\n"


def write_track_csv(path, t, p, v):
    _write(path, track_rows(t, p, v))


def read_track_csv(path):
    """Mobile receiver track: returns ``(t, p (N,3), v (N,3))``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise TrackFormatError("file", f"cannot read {path}: {exc.strerror}") from None
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in TRACK_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise TrackFormatError(missing[0], "column missing from mobile track")
    rows = []
    for i, r in enumerate(reader, start=2):
        try:
            rows.append([float(r[c]) for c in TRACK_COLUMNS])
        except (TypeError, ValueError):
            raise TrackFormatError("row", f"line {i} is not numeric") from None
    if len(rows) < 2:
        raise TrackFormatError("t_s", "need at least two samples")
    a = np.array(rows)
    if not np.all(np.isfinite(a)):
        raise TrackFormatError("row", "non-finite value")
    if np.any(np.diff(a[:, 0]) <= 0):
        raise TrackFormatError("t_s", "time must be strictly increasing")
    return a[:, 0], a[:, 1:4], a[:, 4:7]
