"""Reading raw irregular series, resampling them to a regular grid, model
files, and benchmark reports.

Raw CSV schema (header required, UTF-8)::

    series_id,variable,timestamp,value

with integer epoch seconds as timestamps.
"""

import csv
import hashlib
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .core import ModelParams, ObservationSequence, validate_params
from .exceptions import DataError

CSV_COLUMNS = ("series_id", "variable", "timestamp", "value")
EIGHT_HOURS = 8 * 3600
MODEL_FORMAT_VERSION = 1


@dataclass
class IrregularSeries:
    """Raw observations of one series: ``points[var]`` is a list of (t, value)."""

    series_id: str
    variables: list
    points: dict = field(default_factory=dict)

    def times(self, var):
        return np.array([t for t, _ in self.points[var]], dtype=float)

    def values(self, var):
        return np.array([v for _, v in self.points[var]], dtype=float)


def load_raw_series(path, variables=None):
    """Parse a raw CSV into a list of :class:`IrregularSeries`.

    Series keep first-appearance order. Every series must carry every
    variable; the column order is ``variables`` if given, else the sorted
    names found in the file.
    """
    rows = defaultdict(lambda: defaultdict(list))
    seen = {}
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no records")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        col = {c: header.index(c) for c in CSV_COLUMNS}
        bad = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not x.strip() for x in rec):
                continue
            try:
                sid = rec[col["series_id"]].strip()
                var = rec[col["variable"]].strip()
                ts = int(rec[col["timestamp"]].strip())
                val = float(rec[col["value"]].strip())
                if not sid or not var or not math.isfinite(val):
                    raise ValueError
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            key = (sid, var, ts)
            if key in seen:
                raise DataError(f"{path}: duplicate record {key} on lines {seen[key]} and {lineno}")
            seen[key] = lineno
            if sid not in rows:
                order.append(sid)
            rows[sid][var].append((ts, val))
        if bad:
            shown = ", ".join(map(str, bad[:10])) + (" ..." if len(bad) > 10 else "")
            raise DataError(f"{path}: unparseable rows on lines {shown}")
    if not order:
        raise DataError(f"{path}: no records")

    if variables is not None:
        names = list(variables)
    else:
        names = sorted({v for sid in order for v in rows[sid]})
    out = []
    for sid in order:
        per_var = rows[sid]
        for v in names:
            pts = per_var.get(v, [])
            if len(pts) < 2:
                raise DataError(f"{path}: series {sid!r} variable {v!r} has {len(pts)} point(s), need >= 2")
        out.append(IrregularSeries(sid, names, {v: sorted(per_var[v]) for v in names}))
    return out


def resample_interpolate(series, step_seconds=EIGHT_HOURS):
    """Linear interpolation of every variable onto a regular grid.

    The grid starts at the latest first timestamp over variables and stops
    at or before the earliest last timestamp, so no value is extrapolated.
    """
    step = int(step_seconds)
    if step <= 0:
        raise DataError("step_seconds must be positive")
    start = max(series.times(v)[0] for v in series.variables)
    stop = min(series.times(v)[-1] for v in series.variables)
    if stop < start:
        raise DataError(f"series {series.series_id!r}: variables have no common time window")
    n = int((stop - start) // step) + 1
    if n < 2:
        raise DataError(f"series {series.series_id!r}: resampled grid has {n} point(s), need >= 2")
    grid = start + step * np.arange(n, dtype=float)
    values = np.column_stack([np.interp(grid, series.times(v), series.values(v))
                              for v in series.variables])
    return ObservationSequence(values, series_id=series.series_id)


def load_sequences(path, step_seconds=EIGHT_HOURS, variables=None):
    """Raw CSV straight to resampled :class:`ObservationSequence` objects."""
    return [resample_interpolate(s, step_seconds) for s in load_raw_series(path, variables)]


def write_raw_csv(path, sequences, variables=None, step_seconds=EIGHT_HOURS, t0=0):
    """Write regular sequences in the raw CSV schema (one row per value)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, seq in enumerate(sequences):
            sid = seq.series_id if seq.series_id is not None else i
            names = variables or [f"y{j + 1}" for j in range(seq.d)]
            for t in range(seq.T):
                ts = int(t0 + t * step_seconds)
                for j, name in enumerate(names):
                    w.writerow([sid, name, ts, repr(float(seq.values[t, j]))])


def data_fingerprint(sequences):
    h = hashlib.sha256()
    for s in sequences:
        h.update(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


# -- models -------------------------------------------------------------------

def save_model(params, meta, path):
    """Write a model as JSON. Floats use Python's shortest round-trip repr,
    which reproduces every double exactly."""
    doc = {"format_version": MODEL_FORMAT_VERSION, "l": params.l, "d": params.d}
    doc.update(params.to_dict())
    meta = dict(meta or {})
    doc["beta"] = float(meta.pop("beta", 0.0))
    doc["fit"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=False)
        fh.write("\n")


def load_model(path):
    """Read a model file; returns ``(ModelParams, meta)``.

    Rejects unknown format versions and parameter sets that fail validation.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read model file: {exc}") from exc
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model format_version {version!r} "
                        f"(expected {MODEL_FORMAT_VERSION})")
    try:
        params = ModelParams(**{k: doc[k] for k in ("A", "C", "Q", "R", "pi1", "V1")})
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed model file: {exc}") from exc
    report = validate_params(params)
    if not report.ok:
        raise DataError(f"{path}: " + "; ".join(report.violations))
    if (doc.get("l"), doc.get("d")) != (params.l, params.d):
        raise DataError(f"{path}: declared dimensions do not match the matrices")
    meta = dict(doc.get("fit", {}))
    meta["beta"] = doc.get("beta", 0.0)
    return params, meta


# -- reports ------------------------------------------------------------------

def _num(x):
    return repr(float(x))


def _table_rows(result):
    states = result.state_sizes
    rows = {}
    for c in result.cells:
        key = c.row_key
        if key not in rows:
            rows[key] = {"method": c.method,
                         "beta": "selected" if c.selected else _num(c.beta)}
        rows[key][c.n_states] = "" if not c.ok else _num(c.mean)
    return states, list(rows.values())


def write_report(result, out_dir):
    """Write the benchmark report into ``out_dir``; returns the CSV paths.

    ``table.csv`` has one row per method and beta and one column per state
    count, ``repeats.csv`` lists every repeat value, ``plot_data.csv`` holds
    one AMAE-versus-state-count curve per row, and ``config.json`` echoes
    the run configuration.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create report directory {out_dir}: {exc}") from exc
    paths = {k: os.path.join(out_dir, f"{k}.csv") for k in ("table", "repeats", "plot_data")}
    states, rows = _table_rows(result)
    try:
        with open(paths["table"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "beta"] + [str(s) for s in states])
            for r in rows:
                w.writerow([r["method"], r["beta"]] + [r.get(s, "") for s in states])
        with open(paths["repeats"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "beta", "selected", "n_states", "repeat", "amae"])
            for c in result.cells:
                for r, v in enumerate(c.amae):
                    w.writerow([c.method, _num(c.beta), int(c.selected), c.n_states, r, _num(v)])
        with open(paths["plot_data"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "n_states", "mean_amae", "std_amae", "repeats", "failed"])
            for c in result.cells:
                w.writerow([c.row_key, c.n_states, _num(c.mean), _num(c.std), len(c.amae),
                            c.failed or ""])
    except OSError as exc:
        raise DataError(f"cannot write report in {out_dir}: {exc}") from exc
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(result.config, fh, indent=1, default=str)
        fh.write("\n")
    return paths
