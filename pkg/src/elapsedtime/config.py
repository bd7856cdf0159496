"""Scenario files: a YAML tree describing one model run and its tasks."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError, ValidationError
from .model import (
    AgeDensity,
    AgeGrid,
    DelayKernel,
    FiringCoefficient,
    HistoryFunction,
    check_coefficient,
    make_builtin_coefficient,
    make_kernel,
)
from .simulate import DiscreteDelay, DistributedDelay, Instantaneous, LinearFrozen

TASKS = ("steady", "simulate", "linear-gap", "rate-fit", "certificate", "volterra-check")
VARIANTS = ("instantaneous", "discrete_delay", "distributed_delay", "linear_frozen")

_TOP_KEYS = {"name", "seed", "output_dir", "model", "initial", "reference", "tasks"}
_MODEL_KEYS = {"coefficient", "variant", "delay", "kernel", "r_bar", "grid", "dt", "t_end", "record_every"}
_TASK_KEYS = {
    "steady": {"r_max_scan", "n_scan"},
    "simulate": set(),
    "linear-gap": {"probes", "t_end", "window", "r_bar"},
    "rate-fit": {"kind", "series", "windows", "envelope"},
    "certificate": {"kind", "C0", "lam", "mu"},
    "volterra-check": {"t_end", "dt"},
}


def _check_keys(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _positive(value, where: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a number") from None
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"{where} must be a positive finite number (got {value})")
    return value


def _read_csv_columns(path: Path, names: tuple) -> list:
    if not path.is_file():
        raise ConfigError(f"referenced file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ConfigError(f"{path} needs a header and at least two rows")
    header = [h.strip() for h in rows[0]]
    try:
        idx = [header.index(n) for n in names]
    except ValueError:
        raise ConfigError(f"{path} must have columns {list(names)}") from None
    try:
        data = np.array([[float(r[i]) for i in idx] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError):
        raise ConfigError(f"{path} has non-numeric entries") from None
    return [data[:, j] for j in range(len(names))]


@dataclass
class Scenario:
    name: str
    seed: int
    source: Path
    output_dir: Path
    config_hash: str
    raw: dict
    coefficient: FiringCoefficient
    grid: AgeGrid
    variant_kind: str
    dt: float
    t_end: float
    record_every: int
    delay: Optional[float] = None
    kernel: Optional[DelayKernel] = None
    r_bar: Optional[float] = None
    density_spec: dict = field(default_factory=dict)
    rate_spec: dict = field(default_factory=dict)
    reference: str = "scheme"
    tasks: list = field(default_factory=list)

    def variant(self, r_star: float):
        if self.variant_kind == "instantaneous":
            return Instantaneous()
        if self.variant_kind == "discrete_delay":
            return DiscreteDelay(self.delay)
        if self.variant_kind == "distributed_delay":
            return DistributedDelay(self.kernel)
        return LinearFrozen(r_star if self.r_bar is None else self.r_bar)

    def initial_density(self, equilibrium_cells: Optional[np.ndarray]) -> AgeDensity:
        spec = self.density_spec
        kind = spec["kind"]
        if kind == "uniform":
            return AgeDensity.uniform(self.grid, spec.get("lo", 0.0), spec.get("hi", self.grid.a_max))
        if kind in ("equilibrium", "equilibrium_perturbed"):
            eps = float(spec.get("epsilon", 0.0 if kind == "equilibrium" else 0.2))
            lo, hi = spec.get("bump", [0.0, 1.0])
            bump = AgeDensity.uniform(self.grid, lo, hi).cells
            cells = (1.0 - eps) * equilibrium_cells + eps * bump
            return AgeDensity(self.grid, cells).normalized()
        ages, values = spec["ages"], spec["values"]
        cells = np.interp(self.grid.midpoints, ages, values, left=0.0, right=0.0)
        return AgeDensity(self.grid, cells).normalized()

    def history(self, r_star: float) -> HistoryFunction:
        spec = self.rate_spec
        kind = spec["kind"]
        if kind == "constant":
            return HistoryFunction(self.dt, value=float(spec["value"]))
        if kind == "relative":
            return HistoryFunction(self.dt, value=float(spec.get("factor", 1.0)) * r_star)
        return HistoryFunction(self.dt, times=spec["times"], rates=spec["rates"])


def _parse_density(spec, base: Path, grid: AgeGrid) -> dict:
    spec = dict(spec or {"kind": "equilibrium_perturbed"})
    kind = str(spec.get("kind", "")).lower().replace("-", "_")
    spec["kind"] = kind
    if kind == "uniform":
        _check_keys(spec, {"kind", "lo", "hi"}, "initial.density")
        AgeDensity.uniform(grid, spec.get("lo", 0.0), spec.get("hi", grid.a_max))
    elif kind in ("equilibrium", "equilibrium_perturbed"):
        _check_keys(spec, {"kind", "epsilon", "bump"}, "initial.density")
        eps = float(spec.get("epsilon", 0.2))
        if not 0.0 <= eps <= 1.0:
            raise ConfigError("initial.density.epsilon must lie in [0, 1]")
        bump = spec.get("bump", [0.0, 1.0])
        if not (isinstance(bump, (list, tuple)) and len(bump) == 2):
            raise ConfigError("initial.density.bump must be [lo, hi]")
        AgeDensity.uniform(grid, *bump)
    elif kind == "tabulated":
        _check_keys(spec, {"kind", "file", "ages", "values"}, "initial.density")
        if "file" in spec:
            spec["ages"], spec["values"] = _read_csv_columns(base / spec.pop("file"), ("a", "n"))
        ages = np.asarray(spec.get("ages", []), dtype=float)
        values = np.asarray(spec.get("values", []), dtype=float)
        if ages.size < 2 or ages.shape != values.shape or np.any(np.diff(ages) <= 0):
            raise ConfigError("tabulated density needs increasing ages and matching values")
        if np.any(values < 0) or not np.all(np.isfinite(values)) or values.sum() <= 0:
            raise ConfigError("tabulated density values must be finite, >= 0 and not all zero")
        spec["ages"], spec["values"] = ages, values
    else:
        raise ConfigError(f"unknown initial density kind {kind!r}")
    return spec


def _parse_rate(spec, base: Path, dt: float) -> dict:
    spec = dict(spec or {"kind": "relative", "factor": 1.0})
    kind = str(spec.get("kind", "")).lower()
    spec["kind"] = kind
    if kind == "constant":
        _check_keys(spec, {"kind", "value"}, "initial.rate")
        HistoryFunction(dt, value=spec.get("value", 0.0))
    elif kind == "relative":
        _check_keys(spec, {"kind", "factor"}, "initial.rate")
        if not float(spec.get("factor", 1.0)) >= 0:
            raise ConfigError("initial.rate.factor must be >= 0")
    elif kind == "tabulated":
        _check_keys(spec, {"kind", "file", "times", "rates"}, "initial.rate")
        if "file" in spec:
            spec["times"], spec["rates"] = _read_csv_columns(base / spec.pop("file"), ("t", "r"))
        HistoryFunction(dt, times=spec.get("times"), rates=spec.get("rates"))
    else:
        raise ConfigError(f"unknown initial rate kind {kind!r}")
    return spec


def _parse_tasks(items) -> list:
    if not isinstance(items, list) or not items:
        raise ConfigError("tasks must be a non-empty list")
    tasks = []
    for item in items:
        if isinstance(item, str):
            name, opts = item, {}
        elif isinstance(item, dict) and len(item) == 1:
            name, opts = next(iter(item.items()))
            opts = dict(opts or {})
        else:
            raise ConfigError(f"malformed task entry {item!r}")
        if name not in TASKS:
            raise ConfigError(f"unknown task {name!r}; expected one of {list(TASKS)}")
        _check_keys(opts, _TASK_KEYS[name], f"task {name}")
        tasks.append((name, opts))
    names = [n for n, _ in tasks]
    for later, earlier in (("rate-fit", "simulate"), ("volterra-check", "certificate")):
        if later in names and (earlier not in names or names.index(earlier) > names.index(later)):
            raise ConfigError(f"task {later} needs an earlier {earlier} task")
    return tasks


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; raises ConfigError/ValidationError."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    data = path.read_bytes()
    try:
        raw = yaml.safe_load(data.decode("utf-8"))
    except (yaml.YAMLError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    _check_keys(raw, _TOP_KEYS, "scenario")
    base = path.parent
    name = str(raw.get("name", path.stem))
    seed = raw.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0):
        raise ConfigError("seed must be an unsigned integer")
    out = Path(raw.get("output_dir", f"out/{name}"))
    out = out if out.is_absolute() else base / out

    model = raw.get("model")
    _check_keys(model, _MODEL_KEYS, "model")
    try:
        S = make_builtin_coefficient(model["coefficient"])
    except KeyError:
        raise ConfigError("model.coefficient is required") from None
    check_coefficient(S, n_samples=2000, seed=seed)

    for key in ("dt", "t_end", "grid"):
        if key not in model:
            raise ConfigError(f"model.{key} is required")
    dt = _positive(model["dt"], "model.dt")
    t_end = _positive(model["t_end"], "model.t_end")
    grid_spec = model["grid"]
    _check_keys(grid_spec, {"delta", "a_max", "tail"}, "model.grid")
    delta = _positive(grid_spec.get("delta", dt), "model.grid.delta")
    if "a_max" in grid_spec:
        grid = AgeGrid.from_span(delta, _positive(grid_spec["a_max"], "model.grid.a_max"))
    else:
        grid = AgeGrid.for_coefficient(S, delta, float(grid_spec.get("tail", 1e-12)))
    if abs(dt - grid.delta) > 1e-12 * dt:
        raise ConfigError("model.dt must equal model.grid.delta")
    steps = t_end / dt
    if abs(steps - round(steps)) > 1e-6:
        raise ConfigError("model.t_end must be a multiple of model.dt")
    record_every = model.get("record_every", 1)
    if not (isinstance(record_every, int) and record_every >= 1) or round(steps) % record_every:
        raise ConfigError("model.record_every must be a positive integer dividing t_end/dt")

    variant = str(model.get("variant", "instantaneous")).lower().replace("-", "_")
    if variant not in VARIANTS:
        raise ConfigError(f"model.variant must be one of {list(VARIANTS)}")
    delay = kernel = r_bar = None
    if variant == "discrete_delay":
        if "delay" not in model:
            raise ConfigError("discrete_delay needs model.delay")
        delay = _positive(model["delay"], "model.delay")
    if variant == "distributed_delay":
        if "kernel" not in model:
            raise ConfigError("distributed_delay needs model.kernel")
        kernel = make_kernel(model["kernel"])
        if not kernel.is_point_mass:
            kernel.check_normalization()
    if variant == "linear_frozen" and model.get("r_bar") is not None:
        r_bar = float(model["r_bar"])
        if not (math.isfinite(r_bar) and r_bar >= 0):
            raise ConfigError("model.r_bar must be >= 0")

    initial = raw.get("initial") or {}
    _check_keys(initial, {"density", "rate"}, "initial")
    reference = str(raw.get("reference", "scheme"))
    if reference not in ("scheme", "quadrature"):
        raise ConfigError("reference must be 'scheme' or 'quadrature'")

    return Scenario(
        name=name, seed=seed, source=path, output_dir=out,
        config_hash=hashlib.sha256(data).hexdigest(), raw=raw,
        coefficient=S, grid=grid, variant_kind=variant, dt=dt, t_end=t_end,
        record_every=record_every, delay=delay, kernel=kernel, r_bar=r_bar,
        density_spec=_parse_density(initial.get("density"), base, grid),
        rate_spec=_parse_rate(initial.get("rate"), base, dt),
        reference=reference, tasks=_parse_tasks(raw.get("tasks")),
    )


def validate_scenario(path) -> Scenario:
    try:
        return load_scenario(path)
    except ValidationError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
