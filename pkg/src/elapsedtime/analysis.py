"""Distances, decay-rate fits and linear spectral-gap measurement."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, ValidationError
from .model import AgeDensity, AgeGrid, Equilibrium, FiringCoefficient, ensure_same_grid
from .simulate import LinearFrozen, SimulationConfig, simulate
from .steady import stationary_density

NOISE_FLOOR = 1e-14
MIN_POINTS = 10


def tv_distance(p: AgeDensity, q: AgeDensity) -> float:
    """Total variation distance as the full L1 difference (2 for disjoint densities)."""
    ensure_same_grid(p, q)
    return float(np.sum(np.abs(np.asarray(p.cells) - np.asarray(q.cells)))) * p.grid.delta


@dataclass
class RateFit:
    kind: str
    rate: float
    amplitude: float
    window: tuple
    r_squared: float
    n_points: int = 0
    envelope: Optional[float] = None

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValidationError("fit window needs t_lo < t_hi")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window)
        return out


def upper_envelope(times, values, span: float) -> np.ndarray:
    """Forward running maximum: env(t) = max of values on [t, t + span].

    Oscillating deviations cross zero, which wrecks a log-linear fit; their
    decay is a statement about this envelope.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if span <= 0:
        raise ValidationError("envelope span must be > 0")
    end = np.searchsorted(t, t + span, side="right")
    # suffix maxima of blocks via a sparse table would be faster; traces are short
    return np.array([v[i:end[i]].max() for i in range(t.size)])


def fit_decay(times, values, kind: str = "exponential", window: Optional[Sequence[float]] = None,
              envelope: Optional[float] = None) -> RateFit:
    """Least-squares decay fit of ``values`` against ``times`` on ``window``.

    Exponential: log v = log A - rate t. Algebraic: log v = log A - rate log(1 + t).
    Values below the 1e-14 noise floor are dropped before fitting. With
    ``envelope`` set, the series is first replaced by its upper envelope
    over that time span.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValidationError("times and values must have the same shape")
    if envelope is not None:
        v = upper_envelope(t, v, float(envelope))
    kind = kind.lower()
    if kind not in ("exponential", "algebraic"):
        raise ValidationError("kind must be 'exponential' or 'algebraic'")
    lo, hi = (float(t.min()), float(t.max())) if window is None else map(float, window)
    if not lo < hi:
        raise ValidationError("fit window needs t_lo < t_hi")
    keep = (t >= lo) & (t <= hi) & np.isfinite(v) & (v > NOISE_FLOOR)
    if keep.sum() < MIN_POINTS:
        raise InsufficientData(f"only {int(keep.sum())} usable points in window [{lo}, {hi}]")
    x = t[keep] if kind == "exponential" else np.log1p(t[keep])
    y = np.log(v[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(kind, float(-slope), float(math.exp(intercept)), (lo, hi),
                   float(min(max(r2, 0.0), 1.0)), int(keep.sum()), envelope)


def trace_deviations(trace, reference: Equilibrium) -> dict:
    """Series whose decay the convergence results describe: TV, |r - r*|, |X - X*|."""
    out = {"r": np.abs(trace.r - reference.r_star), "x": np.abs(trace.x - reference.x_star)}
    if trace.tv is not None:
        out["tv"] = trace.tv
    return out


# ---------------------------------------------------------------------------
# Linear spectral gap
# ---------------------------------------------------------------------------


@dataclass
class LinearGapReport:
    lambda_hat: float
    c0_hat: float
    r_bar: float
    window: tuple
    probes: list = field(default_factory=list)

    def __iter__(self):
        yield self.lambda_hat
        yield self.c0_hat

    def to_dict(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def random_probe(grid: AgeGrid, rng: np.random.Generator, span: Optional[float] = None) -> AgeDensity:
    """A random probability density: a few uniform blocks plus a smooth bump."""
    span = min(grid.a_max, span or 10.0)
    cells = np.zeros(grid.n_cells)
    a = grid.midpoints
    for _ in range(int(rng.integers(1, 4))):
        lo, hi = np.sort(rng.uniform(0.0, span, 2))
        hi = max(hi, lo + 5 * grid.delta)
        cells += rng.uniform(0.2, 1.0) * ((a >= lo) & (a < hi)) / (hi - lo)
    centre, width = rng.uniform(0.0, span), rng.uniform(0.2, 2.0)
    cells += rng.uniform(0.0, 1.0) * np.exp(-0.5 * ((a - centre) / width) ** 2)
    return AgeDensity(grid, cells).normalized()


def _probe_run(args):
    S, r_bar, grid, dt, t_end, n0, reference, window = args
    trace = simulate(SimulationConfig(LinearFrozen(r_bar), dt, t_end, grid), S, n0, reference=reference)
    tv = trace.tv
    info = {"tv0": float(tv[0])}
    if tv[0] <= 1e-12:
        info.update(flagged="stationary", rate=None, r_squared=None)
        return info, trace.times, tv
    try:
        fit = fit_decay(trace.times, tv, "exponential", window)
        info.update(flagged=None, rate=fit.rate, r_squared=fit.r_squared, amplitude=fit.amplitude)
    except InsufficientData:
        info.update(flagged="insufficient_data", rate=None, r_squared=None)
    return info, trace.times, tv


def measure_linear_gap(S: FiringCoefficient, r_bar: float, grid: AgeGrid, dt: float, t_end: float,
                       probes: int = 5, seed: int = 0, window: Optional[Sequence[float]] = None,
                       initial: Optional[Sequence[AgeDensity]] = None, jobs: int = 1) -> LinearGapReport:
    """Estimate the decay rate lambda and constant C0 of the frozen-activity problem.

    Runs the linear equation from ``probes`` random probability densities
    (plus any ``initial`` densities), fits an exponential to each TV series
    and returns the slowest fitted rate and the largest ratio
    tv(t) e^{lambda t} / tv(0). Probes already at the stationary state are
    flagged and left out of both estimates.
    """
    if probes < 3:
        raise ValidationError("measure_linear_gap needs probes >= 3")
    if window is None:
        window = (min(2.0, t_end / 10.0), t_end)
    rate, ref_density = stationary_density(S, r_bar, grid)
    reference = Equilibrium(rate, r_bar, ref_density)
    rng = np.random.default_rng(seed)
    starts = [random_probe(grid, rng) for _ in range(probes)] + list(initial or [])
    tasks = [(S, r_bar, grid, dt, t_end, n0, reference, tuple(window)) for n0 in starts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_probe_run, tasks))
    else:
        results = [_probe_run(t) for t in tasks]

    fitted = [(info, times, tv) for info, times, tv in results if info["rate"] is not None]
    if not fitted:
        raise InsufficientData("no probe produced a usable decay fit")
    lam = min(info["rate"] for info, _, _ in fitted)
    c0 = max(float(np.max(tv * np.exp(lam * times))) / tv[0] for _, times, tv in fitted)
    details = [dict(info, probe=i) for i, (info, _, _) in enumerate(results)]
    return LinearGapReport(float(lam), float(c0), float(r_bar), tuple(window), details)
