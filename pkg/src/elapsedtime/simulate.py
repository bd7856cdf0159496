"""Time integration of the elapsed-time model.

The age density is advanced by an exact-characteristic splitting with
dt equal to the age cell width: every cell first decays by the hazard
accumulated along its characteristic over one step, then shifts one slot
to the right. The fired mass re-enters at age zero, so total mass is
conserved up to summation round-off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq

from .errors import NonConvergence, NumericalError, ValidationError
from .model import (
    AgeDensity,
    AgeGrid,
    DelayKernel,
    Equilibrium,
    FiringCoefficient,
    HistoryFunction,
    check_grid,
)

log = logging.getLogger(__name__)

DAMPING = 0.5
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 10_000


# ---------------------------------------------------------------------------
# Configuration and trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instantaneous:
    name = "instantaneous"


@dataclass(frozen=True)
class DiscreteDelay:
    d: float
    name = "discrete_delay"


@dataclass(frozen=True)
class DistributedDelay:
    kernel: DelayKernel
    name = "distributed_delay"


@dataclass(frozen=True)
class LinearFrozen:
    r_bar: float
    name = "linear_frozen"


Variant = Union[Instantaneous, DiscreteDelay, DistributedDelay, LinearFrozen]


@dataclass
class SimulationConfig:
    variant: Variant
    dt: float
    t_end: float
    grid: AgeGrid
    record_every: int = 1
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError("dt must be a positive finite number")
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValidationError("t_end must be a positive finite number")
        if abs(self.dt - self.grid.delta) > 1e-12 * self.grid.delta:
            raise ValidationError(f"dt={self.dt} must equal the age cell width {self.grid.delta}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValidationError("record_every must be a positive integer")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ValidationError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        if int(round(steps)) % int(self.record_every):
            raise ValidationError(f"record_every={self.record_every} must divide the {int(round(steps))} steps")
        if isinstance(self.variant, DiscreteDelay):
            d = self.variant.d
            if not (math.isfinite(d) and d > 0):
                raise ValidationError("discrete delay d must be > 0")
            m = max(int(round(d / self.dt)), 1)
            if abs(m * self.dt - d) > 1e-9 * d:
                msg = f"delay d={d} rounded to {m * self.dt} (multiple of dt)"
                log.warning(msg)
                self.warnings.append(msg)
                self.variant = DiscreteDelay(m * self.dt)
        if isinstance(self.variant, DistributedDelay) and self.variant.kernel.is_point_mass:
            self.variant = DiscreteDelay(self.variant.kernel.d)
            self.__post_init__()
        if isinstance(self.variant, LinearFrozen) and not self.variant.r_bar >= 0:
            raise ValidationError("frozen activity r_bar must be >= 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_every + 1


@dataclass
class SimulationTrace:
    times: np.ndarray
    r: np.ndarray
    x: np.ndarray
    mass: np.ndarray
    tv: Optional[np.ndarray]
    final_density: AgeDensity
    variant: str = ""
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------


def _characteristic_lengths(S: FiringCoefficient, grid: AgeGrid) -> np.ndarray:
    """Active length of [a_i, a_i + dt] for every cell midpoint a_i."""
    a = grid.midpoints
    return S.active_length(a, a + grid.delta)


def _transport(cells: np.ndarray, lost_fraction: np.ndarray, delta: float):
    lost = cells * lost_fraction
    decayed = cells - lost
    fired = float(np.sum(lost)) * delta
    out = np.empty_like(cells)
    out[1:] = decayed[:-1]
    out[-1] += decayed[-1]
    out[0] = fired / delta
    return out, fired


def step_transport(n: AgeDensity, S: FiringCoefficient, X: float, dt: float):
    """Advance the density by one step at frozen activity X.

    Returns ``(new_density, fired_mass)``.
    """
    if abs(dt - n.grid.delta) > 1e-12 * n.grid.delta:
        raise ValidationError(f"dt={dt} must equal the age cell width {n.grid.delta}")
    lost_fraction = -np.expm1(-S.rate_level(X) * _characteristic_lengths(S, n.grid))
    cells, fired = _transport(np.asarray(n.cells), lost_fraction, n.grid.delta)
    return AgeDensity(n.grid, cells), fired


def _active_mask(S: FiringCoefficient, grid: AgeGrid) -> np.ndarray:
    return (grid.midpoints > S.sigma).astype(float)


def firing_rate(n: AgeDensity, S: FiringCoefficient, X: float) -> float:
    """Midpoint quadrature of int S(a, X) n(a) da."""
    return S.rate_level(X) * float(np.dot(_active_mask(S, n.grid), n.cells)) * n.grid.delta


def _damped_fixed_point(F, r, theta=DAMPING, tol=FIXED_POINT_TOL, max_iter=FIXED_POINT_MAX_ITER):
    for it in range(1, max_iter + 1):
        fr = F(r)
        resid = abs(r - fr)
        if resid <= tol:
            return r, it
        r = (1.0 - theta) * r + theta * fr
        if not math.isfinite(r):
            raise NumericalError("fixed-point iterate became non-finite")
    raise NonConvergence(
        f"instantaneous rate did not converge in {max_iter} iterations (residual {resid:.3e})",
        residual=resid, iterations=max_iter,
    )


def solve_instantaneous_rate(n: AgeDensity, S: FiringCoefficient, r_guess: float) -> float:
    """Solve r = int S(a, r) n(a) da by damped fixed-point iteration."""
    active_mass = float(np.dot(_active_mask(S, n.grid), n.cells)) * n.grid.delta
    if S.lipschitz_ell == 0:
        return S.rate_level(r_guess) * active_mass
    return _damped_fixed_point(lambda r: S.rate_level(r) * active_mass, float(r_guess))[0]


def _past_contribution(history: HistoryFunction, kernel: DelayKernel, t: float, dt: float) -> float:
    """int over s < 0 of alpha(t - s) r0(s) ds, lags beyond the horizon dropped.

    Before the first tabulated time the history is constant, which is
    integrated against the closed-form kernel tail; the tabulated stretch
    uses a composite midpoint rule with spacing at most dt (and >= 64 points).
    """
    h = kernel.horizon
    split = t - history.table_start  # lag where the tabulated stretch ends
    total = history.first_value * float(kernel.truncated_tail(max(split, t)))
    lo, hi = t, min(split, h)
    if hi > lo:
        n = max(64, int(math.ceil((hi - lo) / dt)))
        lag = lo + (np.arange(n) + 0.5) * (hi - lo) / n
        total += float(np.sum(kernel.evaluate(lag) * history.past(t - lag))) * (hi - lo) / n
    return total


def activity_distributed(history: HistoryFunction, kernel: DelayKernel, t: float, dt: float) -> float:
    """X(t) = int_{-inf}^t alpha(t - s) r(s) ds from the stored history.

    The computed part uses product-trapezoid weights (piecewise-linear r
    integrated exactly against alpha); the past part is
    :func:`_past_contribution`. A point-mass kernel reduces to r(t - d).
    """
    if kernel.is_point_mass:
        return history.lookup(t - kernel.d)
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(dt, t) or abs(dt - history.dt) > 1e-12 * dt:
        raise ValidationError("t must lie on the history grid")
    if len(history) < n + 1:
        raise ValidationError(f"history covers {len(history)} samples, need {n + 1} (gap before t={t})")
    past = _past_contribution(history, kernel, t, dt)
    if n == 0:
        return past
    full, tail_half = kernel.lag_weights(n, dt)
    r = history.computed_values[: n + 1]
    computed = float(np.dot(full[:n][::-1], r[1:])) + tail_half[n] * r[0]
    return past + computed


class _DistributedActivity:
    """Incremental X(t_n) for a simulation; past part and weights precomputed."""

    def __init__(self, kernel: DelayKernel, history: HistoryFunction, dt: float, n_steps: int):
        self.history = history
        n_lags = min(n_steps, int(math.ceil(kernel.horizon / dt)) + 1)
        full, tail_half = kernel.lag_weights(n_lags, dt)
        self.head = full[0]
        self.n_lags = n_lags
        self.rev = full[1:n_lags][::-1].copy()  # lags n_lags-1 .. 1
        self.tail_half = tail_half
        t = np.arange(n_steps + 1) * dt
        self.past = np.zeros(n_steps + 1)
        if history.table_start == 0.0:
            self.past[:] = history.first_value * kernel.truncated_tail(t)
        else:
            live = np.flatnonzero(t < kernel.horizon)
            self.past[live] = [_past_contribution(history, kernel, float(t[k]), dt) for k in live]

    def base(self, n: int) -> float:
        """Everything in X(t_n) except the weight on the current rate r_n."""
        r = self.history.computed_values
        out = self.past[n]
        if n == 0:
            return out
        if n <= self.n_lags:
            # the window reaches back to s = 0: r_0 gets only the left half hat
            return out + float(np.dot(self.rev[self.n_lags - n:], r[1:n])) + self.tail_half[n] * r[0]
        # lags beyond the horizon carry no weight
        return out + float(np.dot(self.rev, r[n - self.n_lags + 1:n]))


def discrete_equilibrium(S: FiringCoefficient, grid: AgeGrid, r_guess: float) -> Equilibrium:
    """Fixed point of the time-stepping scheme itself, near ``r_guess``.

    The equilibrium profile is an exact fixed point of the transport step,
    but the midpoint firing rate of that profile differs from the
    quadrature r* by O((phi delta)^2). This solves r = firing_rate(n_r, S, r)
    with n_r the unit-mass profile, so traces can be compared with the state
    the scheme actually converges to.
    """
    from .steady import _stationary_profile

    active = _active_mask(S, grid)

    def density(r):
        cells = _stationary_profile(S, r, grid)
        return cells / (float(np.sum(cells)) * grid.delta)

    def gap(r):
        return S.rate_level(r) * float(np.dot(active, density(r))) * grid.delta - r

    lo, hi, width = r_guess, r_guess, 1e-6 * max(r_guess, 1e-12)
    for _ in range(60):
        lo, hi = max(r_guess - width, 0.0), r_guess + width
        if gap(lo) * gap(hi) <= 0:
            break
        width *= 2.0
    else:
        raise NonConvergence(f"no scheme equilibrium bracketed near r={r_guess}")
    r = brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return Equilibrium(r_star=float(r), x_star=float(r), density=AgeDensity(grid, density(r)))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def simulate(config: SimulationConfig, S: FiringCoefficient, n0: AgeDensity,
             history: Optional[HistoryFunction] = None,
             reference: Optional[Equilibrium] = None) -> SimulationTrace:
    """Integrate one model variant from ``n0`` and record r, X, mass and TV distance."""
    grid = config.grid
    if n0.grid != grid:
        raise ValidationError("initial density grid differs from the configured grid")
    check_grid(S, grid)
    m0 = n0.mass()
    if abs(m0 - 1.0) > 1e-9:
        raise ValidationError(f"initial mass must be 1 (got {m0!r})")
    if reference is not None and reference.density.grid != grid:
        raise ValidationError("reference equilibrium uses a different grid")
    variant = config.variant
    dt = config.dt
    if history is None:
        history = HistoryFunction(dt)
    elif abs(history.dt - dt) > 1e-12 * dt or len(history):
        raise ValidationError("history must be fresh and share the simulation dt")

    n_steps = config.n_steps
    delta = grid.delta
    lengths = _characteristic_lengths(S, grid)
    active = _active_mask(S, grid)
    cells = np.array(n0.cells, dtype=float)
    ref_cells = None if reference is None else np.asarray(reference.density.cells)

    n_rec = config.n_records
    times = np.empty(n_rec)
    r_rec = np.empty(n_rec)
    x_rec = np.empty(n_rec)
    m_rec = np.empty(n_rec)
    tv_rec = np.empty(n_rec) if ref_cells is not None else None

    delay_steps = None
    activity = None
    if isinstance(variant, DiscreteDelay):
        delay_steps = int(round(variant.d / dt))
    elif isinstance(variant, DistributedDelay):
        activity = _DistributedActivity(variant.kernel, history, dt, n_steps)

    r_prev = None
    cached_level, lost_fraction = None, None
    rec = 0
    for n in range(n_steps + 1):
        t = n * dt
        active_mass = float(np.dot(active, cells)) * delta

        if isinstance(variant, LinearFrozen):
            x = variant.r_bar
            r = S.rate_level(x) * active_mass
        elif isinstance(variant, Instantaneous):
            guess = active_mass * S.s0 if r_prev is None else r_prev
            if S.lipschitz_ell == 0:
                r = S.rate_level(guess) * active_mass
            else:
                r = _damped_fixed_point(lambda v: S.rate_level(v) * active_mass, guess)[0]
            x = r
        elif delay_steps is not None:
            x = history.value_at_index(n - delay_steps) if n >= delay_steps else float(history.past(t - variant.d))
            r = S.rate_level(x) * active_mass
        else:
            base = activity.base(n)
            weight = activity.head if n > 0 else 0.0
            x = base
            for _ in range(200):
                r = S.rate_level(x) * active_mass
                x_new = base + weight * r
                if abs(x_new - x) <= 1e-15 * max(1.0, abs(x_new)):
                    x = x_new
                    break
                x = x_new
            else:
                raise NonConvergence(f"implicit activity update failed at t={t}")
            r = S.rate_level(x) * active_mass

        if not (math.isfinite(r) and math.isfinite(x)):
            raise NumericalError(f"non-finite rate at t={t}")
        history.append(r)
        r_prev = r

        if n % config.record_every == 0:
            times[rec] = t
            r_rec[rec] = r
            x_rec[rec] = x
            m_rec[rec] = float(np.sum(cells)) * delta
            if tv_rec is not None:
                tv_rec[rec] = float(np.sum(np.abs(cells - ref_cells))) * delta
            rec += 1

        if n == n_steps:
            break
        level = S.rate_level(x)
        if level != cached_level:
            cached_level, lost_fraction = level, -np.expm1(-level * lengths)
        cells, fired = _transport(cells, lost_fraction, delta)
        if not math.isfinite(fired):
            raise NumericalError(f"non-finite density after step at t={t}")

    return SimulationTrace(
        times=times, r=r_rec, x=x_rec, mass=m_rec, tv=tv_rec,
        final_density=AgeDensity(grid, cells), variant=variant.name,
        warnings=list(config.warnings),
    )
