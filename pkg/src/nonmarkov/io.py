"""CSV/JSON serialization of trajectories and reports.

Floats are written with 17 significant digits so that re-reading a file
reproduces every value bit for bit.
"""
from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .volterra import Trajectory

FLOAT_FMT = "{:.17g}"
_HEADER_RE = re.compile(r"^# nonmarkov trajectory d=(\d+) label=(\w+)(?: base=(\w+))?")


def fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def trajectory_columns(d: int) -> list[str]:
    dd = d * d
    cols = ["t"]
    for r in range(dd):
        for c in range(dd):
            cols += [f"re_{r}_{c}", f"im_{r}_{c}"]
    cols.append("unitality_residual")
    return cols


def write_trajectory_csv(traj: Trajectory, path) -> None:
    d = traj.d
    dd = d * d
    res = traj.unitality_residuals()
    flat = traj.samples.reshape(len(traj), dd * dd)
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# nonmarkov trajectory d={d} label={traj.label}"
            + (f" base={traj.base_label}" if traj.base_label else "")
            + " columns: t, then "
            f"re/im interleaved superoperator entries S[r,c] row-major over the "
            f"{dd}x{dd} column-stacking matrix, then unitality_residual\n"
        )
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trajectory_columns(d))
        for t, row, u in zip(traj.times, flat, res):
            vals = [fmt(t)]
            for z in row:
                vals += [fmt(z.real), fmt(z.imag)]
            vals.append(fmt(u))
            writer.writerow(vals)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        first = fh.readline()
        m = _HEADER_RE.match(first)
        if not m:
            raise ValueError(f"{path}: missing trajectory header comment")
        d, label, base = int(m.group(1)), m.group(2), m.group(3)
        reader = csv.reader(fh)
        cols = next(reader)
        if cols != trajectory_columns(d):
            raise ValueError(f"{path}: unexpected column layout")
        dd = d * d
        times, samples = [], []
        for row in reader:
            vals = [float(v) for v in row]
            times.append(vals[0])
            re_im = np.array(vals[1:1 + 2 * dd * dd])
            samples.append((re_im[0::2] + 1j * re_im[1::2]).reshape(dd, dd))
    return Trajectory(d, np.array(times), np.array(samples), label, base_label=base)


def _clean(obj):
    """Recursively replace non-finite floats with None for strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
