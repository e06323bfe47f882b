"""Scenario files, measurement CSVs and result bundles.

Scenario files are JSON objects whose keys mirror :class:`ScenarioSpec`,
with nested ``solver`` and ``tracker`` objects and an ``output_dir``.
Unknown keys are rejected.  Measurements are CSV with header
``k,sensor,re,im``.  Results are written as::

    <out>/<method>/records.csv
    <out>/<method>/summary.json
    <out>/rmse_series.csv
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .scenarios import METHODS, REFERENCE_MAGNITUDES, ScenarioSpec, TrackerOptions
from .sparse_bayes import SolverConfig

__all__ = [
    "ConfigError",
    "MeasurementFormatError",
    "BUNDLED_SCENARIOS",
    "RECORD_HEADER",
    "MEASUREMENT_HEADER",
    "SERIES_HEADER",
    "default_config",
    "scenario_to_config",
    "scenario_from_config",
    "load_config",
    "load_scenario",
    "write_measurements",
    "read_measurements",
    "write_bundle",
    "read_records",
]

BUNDLED_SCENARIOS = ("endfire", "non_endfire", "random_init")
RECORD_HEADER = ["trial", "k", "true_doa_deg", "est_doa_deg", "num_kept", "iters", "solver_ms"]
MEASUREMENT_HEADER = ["k", "sensor", "re", "im"]
SERIES_HEADER = ["k", "rmse_baseline", "rmse_modified"]
DEFAULT_OUTPUT_DIR = "results"

_SPEC_KEYS = [f.name for f in fields(ScenarioSpec) if f.name not in ("solver", "tracker")]
_SOLVER_KEYS = [f.name for f in fields(SolverConfig)]
_TRACKER_KEYS = [f.name for f in fields(TrackerOptions)]


class ConfigError(ValueError):
    """Invalid scenario file or command-line override."""


class MeasurementFormatError(ValueError):
    """Malformed measurement CSV; the message carries ``file:line:col``."""


def _amp_to_json(amp):
    if isinstance(amp, str):
        return amp
    amp = complex(amp)
    return amp.real if amp.imag == 0 else [amp.real, amp.imag]


def _amp_from_json(value, where):
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{where}: signal_amplitude must be a number, [re, im] or 'random_pm1'")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, list) and len(value) == 2 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        return complex(value[0], value[1]) if value[1] != 0 else float(value[0])
    raise ConfigError(f"{where}: signal_amplitude must be a number, [re, im] or 'random_pm1'")


def scenario_to_config(spec: ScenarioSpec, output_dir: str = DEFAULT_OUTPUT_DIR) -> dict:
    """Fully resolved scenario file contents for ``spec``."""
    cfg = {k: getattr(spec, k) for k in _SPEC_KEYS}
    cfg["signal_amplitude"] = _amp_to_json(spec.signal_amplitude)
    cfg["solver"] = asdict(spec.solver)
    cfg["tracker"] = asdict(spec.tracker)
    cfg["output_dir"] = str(output_dir)
    return cfg


def default_config() -> dict:
    return scenario_to_config(ScenarioSpec())


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def scenario_from_config(cfg: dict, source: str = "<config>"):
    """Build ``(ScenarioSpec, output_dir)`` from a parsed scenario object."""
    _reject_unknown(cfg, _SPEC_KEYS + ["solver", "tracker", "output_dir"], source)
    kwargs = {k: v for k, v in cfg.items() if k in _SPEC_KEYS}
    if "signal_amplitude" in kwargs:
        kwargs["signal_amplitude"] = _amp_from_json(kwargs["signal_amplitude"], source)
    solver = cfg.get("solver", {})
    _reject_unknown(solver, _SOLVER_KEYS, f"{source}: solver")
    tracker = cfg.get("tracker", {})
    _reject_unknown(tracker, _TRACKER_KEYS, f"{source}: tracker")
    output_dir = cfg.get("output_dir", DEFAULT_OUTPUT_DIR)
    if not isinstance(output_dir, str):
        raise ConfigError(f"{source}: output_dir must be a string")
    try:
        spec = ScenarioSpec(solver=SolverConfig(**solver), tracker=TrackerOptions(**tracker), **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return spec, output_dir


def _resolve(ref: str):
    """Path of a scenario file; bare bundled names map to package data."""
    if ref in BUNDLED_SCENARIOS:
        return resources.files("doa_bcskf") / "data" / f"{ref}.json", f"<bundled {ref}>"
    return Path(ref), ref


def load_config(ref: str | None) -> dict:
    """Parsed scenario object merged over the defaults."""
    cfg = default_config()
    if ref is None:
        return cfg
    path, label = _resolve(ref)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{label}: cannot read scenario file ({exc.strerror or exc})") from None
    try:
        user = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{label}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from None
    _reject_unknown(user, _SPEC_KEYS + ["solver", "tracker", "output_dir"], label)
    for key in ("solver", "tracker"):
        if key in user:
            _reject_unknown(user[key], _SOLVER_KEYS if key == "solver" else _TRACKER_KEYS, f"{label}: {key}")
            cfg[key].update(user.pop(key))
    cfg.update(user)
    return cfg


def _reject_constant(name):
    raise ValueError(f"non-finite literal {name} is not allowed")


def load_scenario(ref: str | None, source: str | None = None):
    return scenario_from_config(load_config(ref), source or (ref or "<defaults>"))


def write_measurements(stream, snapshots) -> None:
    """Write complex snapshots (sequence of length-M arrays) as CSV rows."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(MEASUREMENT_HEADER)
    for k, y in enumerate(snapshots):
        for m, v in enumerate(np.asarray(y, dtype=complex)):
            w.writerow([k, m, repr(float(v.real)), repr(float(v.imag))])


def read_measurements(path) -> list:
    """Read a measurement CSV into a list of complex vectors, one per snapshot."""
    label = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MeasurementFormatError(f"{label}: cannot read file ({exc.strerror or exc})") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != ",".join(MEASUREMENT_HEADER):
        raise MeasurementFormatError(f"{label}:1:1: expected header '{','.join(MEASUREMENT_HEADER)}'")
    rows = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 4:
            raise MeasurementFormatError(f"{label}:{lineno}:1: expected 4 fields, found {len(cells)}")
        col = 1
        parsed = []
        for i, cell in enumerate(cells):
            try:
                value = int(cell) if i < 2 else float(cell)
            except ValueError:
                kind = "integer" if i < 2 else "number"
                raise MeasurementFormatError(f"{label}:{lineno}:{col}: invalid {kind} {cell!r}") from None
            if i >= 2 and not np.isfinite(value):
                raise MeasurementFormatError(f"{label}:{lineno}:{col}: non-finite value {cell!r}")
            if i < 2 and value < 0:
                raise MeasurementFormatError(f"{label}:{lineno}:{col}: negative index {cell!r}")
            parsed.append(value)
            col += len(cell) + 1
        k, m, re, im = parsed
        if (k, m) in rows:
            raise MeasurementFormatError(f"{label}:{lineno}:1: duplicate entry for k={k}, sensor={m}")
        rows[(k, m)] = complex(re, im)
    if not rows:
        raise MeasurementFormatError(f"{label}: no measurements")
    ks = sorted({k for k, _ in rows})
    M = 1 + max(m for _, m in rows)
    if ks != list(range(len(ks))):
        raise MeasurementFormatError(f"{label}: snapshot indices must run 0..K-1")
    snaps = []
    for k in ks:
        missing = [m for m in range(M) if (k, m) not in rows]
        if missing:
            raise MeasurementFormatError(f"{label}: snapshot {k} is missing sensor(s) {missing}")
        snaps.append(np.array([rows[(k, m)] for m in range(M)]))
    return snaps


def _fmt(x):
    return "" if x is None else repr(float(x))


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    for r in records:
        w.writerow([r.trial, r.k, _fmt(r.true_doa), _fmt(r.est_doa), r.num_kept, r.iters, f"{r.solver_ms:.3f}"])
    return buf.getvalue()


def read_records(path) -> list:
    """Rows of a ``records.csv`` as dicts of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)


def _summary(result, output_dir) -> dict:
    spec = result.spec
    ref = REFERENCE_MAGNITUDES.get(spec.name, {}).get(result.method)
    return {
        "method": result.method,
        "mean_rmse_deg": result.mean_rmse,
        "mean_time_s": result.mean_time_s,
        "per_snapshot_rmse_deg": [float(v) for v in result.per_snapshot_rmse],
        "num_trials": spec.num_trials,
        "seed": spec.seed,
        "trial_seeds": list(result.trial_seeds),
        "reference": None if ref is None else {"mean_rmse_deg": ref[0], "mean_time_s": ref[1]},
        "config": scenario_to_config(spec, output_dir),
        "version": __version__,
        "kernel": BACKEND,
    }


def write_bundle(out_dir, results: dict, output_dir_echo: str | None = None) -> Path:
    """Write records, summaries and the RMSE series for ``{method: RunResult}``."""
    out = Path(out_dir)
    echo = str(out) if output_dir_echo is None else output_dir_echo
    for method, result in results.items():
        d = out / method
        d.mkdir(parents=True, exist_ok=True)
        (d / "records.csv").write_text(records_csv(result.records), encoding="utf-8")
        (d / "summary.json").write_text(
            json.dumps(_summary(result, echo), indent=2, allow_nan=False) + "\n", encoding="utf-8")
    K = next(iter(results.values())).spec.num_snapshots
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_HEADER)
    for k in range(K):
        w.writerow([k] + [_fmt(results[m].per_snapshot_rmse[k]) if m in results else "" for m in METHODS])
    (out / "rmse_series.csv").write_text(buf.getvalue(), encoding="utf-8")
    return out


def threads_from_env(value: int | None) -> int:
    """Worker count from the flag, else ``DOA_BCSKF_THREADS``, else 1."""
    if value is not None:
        n = value
    else:
        raw = os.environ.get("DOA_BCSKF_THREADS", "").strip()
        if not raw:
            return 1
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"DOA_BCSKF_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n
