"""Writers for trace CSVs, density CSVs and JSON reports."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .model import AgeDensity


def _fmt(x) -> str:
    return "%.17g" % x


def _clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_trace_csv(path: Path, trace) -> Path:
    """Columns t,r,X,mass,tv; tv left empty without a reference equilibrium."""
    path = Path(path)
    tv = trace.tv if trace.tv is not None else [None] * len(trace.times)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("t,r,X,mass,tv\n")
        for t, r, x, m, d in zip(trace.times, trace.r, trace.x, trace.mass, tv):
            fh.write(f"{_fmt(t)},{_fmt(r)},{_fmt(x)},{_fmt(m)},{'' if d is None else _fmt(d)}\n")
    return path


def write_density_csv(path: Path, density: AgeDensity) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("a_mid,n\n")
        for a, n in zip(density.grid.midpoints, density.cells):
            fh.write(f"{_fmt(a)},{_fmt(n)}\n")
    return path


def read_trace_csv(path: Path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}
