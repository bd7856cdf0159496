"""Domain types: firing coefficients, delay kernels, age grids, densities and
firing-rate histories.

Every built-in firing coefficient has the separable form

    S(a, X) = phi(X) * 1{a > sigma}

so the hazard accumulated along a characteristic segment is known exactly,
which the transport scheme and the steady-state quadrature both rely on.
"""

from __future__ import annotations

import functools
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import GridMismatch, ValidationError

log = logging.getLogger(__name__)

DEFAULT_TAIL_TOL = 1e-6
AGE_TAIL_TOL = 1e-12

# Gauss-Legendre rule used for all per-interval kernel quadratures.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# Firing coefficient
# ---------------------------------------------------------------------------


def _phi_constant(level, x):
    return level + 0.0 * np.asarray(x, dtype=float)


def _phi_sigmoid(base, scale, x):
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return base + scale * x / (1.0 + x)


def _phi_linear(base, slope, cap, x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, cap)
    return base + slope * x


@dataclass(frozen=True)
class FiringCoefficient:
    """S(a, X) = phi(X) on a > sigma, zero below, with its structural constants.

    ``phi`` must accept scalars or arrays. Use the builders below; direct
    construction is meant for test doubles whose constants the caller vouches for.
    """

    phi: Callable = field(compare=False, repr=False)
    sigma: float
    lipschitz_ell: float
    sup_norm: float
    s0: float
    kind: str = "custom"
    params: Mapping = field(default_factory=dict, compare=False)

    def evaluate(self, a, x):
        a = np.asarray(a, dtype=float)
        active = a > self.sigma if self.sigma > 0 else a >= 0.0
        return np.where(active, self.phi(x), 0.0)

    def rate_level(self, x) -> float:
        """phi(X): the value of S on the active ages a > sigma."""
        return float(self.phi(x))

    def active_length(self, lo, hi):
        """Length of [lo, hi] lying in the active region a > sigma."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return np.clip(hi - np.maximum(lo, self.sigma), 0.0, None)

    def segment_hazard(self, lo, hi, x):
        """Exact integral of S(., X) over [lo, hi]."""
        return self.rate_level(x) * self.active_length(lo, hi)

    def cumulative_hazard(self, a, x):
        """int_0^a S(s, X) ds."""
        return self.segment_hazard(0.0, a, x)

    def describe(self) -> dict:
        return {"kind": self.kind, **dict(self.params)}


def constant_coefficient(s0: float) -> FiringCoefficient:
    s0 = _finite("s0", s0)
    if s0 <= 0:
        raise ValidationError("Constant coefficient needs s0 > 0")
    return FiringCoefficient(
        phi=functools.partial(_phi_constant, s0),
        sigma=0.0, lipschitz_ell=0.0, sup_norm=s0, s0=s0,
        kind="constant", params={"s0": s0},
    )


def step_coefficient(sigma: float, level: float = 1.0) -> FiringCoefficient:
    sigma = _finite("sigma", sigma)
    level = _finite("level", level)
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if level <= 0:
        raise ValidationError("step level must be > 0")
    return FiringCoefficient(
        phi=functools.partial(_phi_constant, level),
        sigma=sigma, lipschitz_ell=0.0, sup_norm=level, s0=level,
        kind="step", params={"sigma": sigma, "level": level},
    )


def step_times_sigmoid(sigma: float, base: float, ell_scale: float) -> FiringCoefficient:
    """phi(X) = base + ell_scale * X / (1 + X).

    |phi'| = |ell_scale| / (1 + X)^2 peaks at X = 0, so the Lipschitz constant
    is |ell_scale|. phi is monotone with limit base + ell_scale as X -> inf.
    A negative ``ell_scale`` gives an inhibitory coupling.
    """
    sigma = _finite("sigma", sigma)
    base = _finite("base", base)
    ell_scale = _finite("ell_scale", ell_scale)
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    lo = base + min(ell_scale, 0.0)
    if base <= 0 or lo <= 0:
        raise ValidationError("phi must stay strictly positive (base + min(ell_scale, 0) > 0)")
    return FiringCoefficient(
        phi=functools.partial(_phi_sigmoid, base, ell_scale),
        sigma=sigma, lipschitz_ell=abs(ell_scale),
        sup_norm=base + max(ell_scale, 0.0), s0=lo,
        kind="step_times_sigmoid",
        params={"sigma": sigma, "base": base, "ell_scale": ell_scale},
    )


def step_times_linear(sigma: float, base: float, slope: float, x_cap: float) -> FiringCoefficient:
    """phi(X) = base + slope * min(X, x_cap); linear coupling with a cap."""
    sigma = _finite("sigma", sigma)
    base = _finite("base", base)
    slope = _finite("slope", slope)
    x_cap = _finite("x_cap", x_cap)
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if x_cap <= 0:
        raise ValidationError("x_cap must be > 0")
    lo = base + min(slope, 0.0) * x_cap
    if base <= 0 or lo <= 0:
        raise ValidationError("phi must stay strictly positive on [0, x_cap]")
    return FiringCoefficient(
        phi=functools.partial(_phi_linear, base, slope, x_cap),
        sigma=sigma, lipschitz_ell=abs(slope),
        sup_norm=base + max(slope, 0.0) * x_cap, s0=lo,
        kind="step_times_linear",
        params={"sigma": sigma, "base": base, "slope": slope, "x_cap": x_cap},
    )


_COEFFICIENT_BUILDERS = {
    "constant": (constant_coefficient, ("s0",)),
    "step": (step_coefficient, ("sigma", "level")),
    "step_times_sigmoid": (step_times_sigmoid, ("sigma", "base", "ell_scale")),
    "step_times_linear": (step_times_linear, ("sigma", "base", "slope", "x_cap")),
}


def _kind_key(kind) -> str:
    """'StepTimesSigmoid', 'step-times-sigmoid' and 'step_times_sigmoid' all match."""
    kind = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", "_", str(kind))
    return kind.lower().replace("-", "_")


def make_builtin_coefficient(spec: Mapping) -> FiringCoefficient:
    """Build a coefficient from a descriptor like ``{"kind": "step", "sigma": 1}``."""
    spec = dict(spec)
    kind = _kind_key(spec.pop("kind", ""))
    if kind not in _COEFFICIENT_BUILDERS:
        raise ValidationError(
            f"unknown coefficient kind {kind!r}; expected one of {sorted(_COEFFICIENT_BUILDERS)}"
        )
    builder, allowed = _COEFFICIENT_BUILDERS[kind]
    extra = set(spec) - set(allowed)
    if extra:
        raise ValidationError(f"unexpected parameters for {kind}: {sorted(extra)}")
    try:
        return builder(**spec)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {kind}: {exc}") from None


# ---------------------------------------------------------------------------
# Delay kernels
# ---------------------------------------------------------------------------


def _exp_density(beta, s):
    s = np.asarray(s, dtype=float)
    return np.where(s >= 0, beta * np.exp(-beta * np.maximum(s, 0.0)), 0.0)


def _exp_tail(beta, s):
    return np.exp(-beta * np.maximum(np.asarray(s, dtype=float), 0.0))


def _alg_density(beta, s):
    s = np.asarray(s, dtype=float)
    return np.where(s >= 0, (beta - 1.0) * (1.0 + np.maximum(s, 0.0)) ** (-beta), 0.0)


def _alg_tail(beta, s):
    return (1.0 + np.maximum(np.asarray(s, dtype=float), 0.0)) ** (1.0 - beta)


def _tab_density(s_nodes, values, s):
    s = np.asarray(s, dtype=float)
    return np.interp(s, s_nodes, values, left=0.0, right=0.0)


@dataclass(frozen=True)
class DelayKernel:
    """Probability density alpha over transmission lags.

    ``kind`` is one of point_mass, exponential, algebraic, tabulated. Lags
    beyond ``horizon`` are treated as carrying no weight.
    """

    kind: str
    horizon: float
    d: Optional[float] = None
    c_alpha: Optional[float] = None
    beta: Optional[float] = None
    tail_tol: float = DEFAULT_TAIL_TOL
    evaluate: Optional[Callable] = field(default=None, compare=False, repr=False)
    tail_fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    @property
    def is_point_mass(self) -> bool:
        return self.kind == "point_mass"

    def tail(self, s):
        """int_s^inf alpha (no truncation)."""
        if self.tail_fn is not None:
            return self.tail_fn(s)
        s = np.asarray(s, dtype=float)
        out = np.array([self.integrate(x, self.horizon) for x in s.ravel()]).reshape(s.shape)
        return out if s.ndim else float(out)

    def truncated_tail(self, s):
        """int_s^horizon alpha: the weight of lags in [s, horizon]."""
        s = np.asarray(s, dtype=float)
        if self.tail_fn is None:
            return self.tail(np.minimum(s, self.horizon))
        return np.clip(self.tail_fn(np.minimum(s, self.horizon)) - self.tail_fn(self.horizon), 0.0, None)

    def integrate(self, lo: float, hi: float, panels: Optional[int] = None) -> float:
        """Composite Gauss-Legendre integral of alpha over [lo, hi]."""
        if hi <= lo:
            return 0.0
        if panels is None:
            panels = int(min(max(64, 8 * (hi - lo)), 200_000))
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)[:, None]
        mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
        nodes = mid + half * _GL_NODES
        return float(np.sum(half * _GL_WEIGHTS * self.evaluate(nodes)))

    def normalization_integral(self) -> float:
        """Numerical int_0^horizon alpha, independent of the closed-form tail."""
        if self.is_point_mass:
            return 1.0
        # graded panels resolve both the peak near 0 and slow algebraic tails
        edges = np.concatenate([[0.0], np.geomspace(1e-3, self.horizon, 400)])
        return math.fsum(self.integrate(lo, hi, panels=16) for lo, hi in zip(edges[:-1], edges[1:]))

    def check_normalization(self) -> float:
        """Return |int_0^horizon alpha - 1|; raises if above tail_tol (with slack)."""
        err = abs(self.normalization_integral() - 1.0)
        if err > self.tail_tol * (1.0 + 1e-6) + 1e-12:
            raise ValidationError(f"kernel normalization off by {err:.3e} (tail_tol {self.tail_tol:.1e})")
        return err

    def lag_weights(self, n_lags: int, dt: float):
        """Product-trapezoid weights for int_0^{n dt} alpha(u) r(t - u) du.

        r is taken piecewise linear between samples, and each hat function is
        integrated against alpha by 16-point Gauss-Legendre per interval.
        Returns ``(full, tail_half)``: ``full[k]`` is the hat weight at lag k
        (lag 0 only has its right half), ``tail_half[k]`` is the left-half
        weight at lag k, used for the oldest sample of the window. Both have
        length ``n_lags + 1``; ``full[n_lags]`` is incomplete.
        """
        if self.is_point_mass:
            raise ValidationError("point-mass kernels have no lag weights")
        k = np.arange(n_lags, dtype=float)
        lo = k * dt
        hi = np.minimum(lo + dt, self.horizon)
        width = np.clip(hi - lo, 0.0, None)
        half = 0.5 * width[:, None]
        u = lo[:, None] + half * (1.0 + _GL_NODES)
        f = self.evaluate(u) * half * _GL_WEIGHTS
        frac = (u - lo[:, None]) / dt
        right = np.sum(f * (1.0 - frac), axis=1)  # hat centred at lo, right half
        left = np.sum(f * frac, axis=1)           # hat centred at lo + dt, left half
        full = np.zeros(n_lags + 1)
        full[:n_lags] += right
        full[1:] += left
        tail_half = np.zeros(n_lags + 1)
        tail_half[1:] = left
        return full, tail_half

    def describe(self) -> dict:
        out = {"kind": self.kind, "horizon": self.horizon, "tail_tol": self.tail_tol}
        for key in ("d", "c_alpha", "beta"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def point_mass_kernel(d: float) -> DelayKernel:
    d = _finite("d", d)
    if d <= 0:
        raise ValidationError("discrete delay d must be > 0")
    return DelayKernel(kind="point_mass", horizon=d, d=d, tail_tol=0.0)


def exponential_horizon(c_alpha, beta, tail_tol):
    return max(math.log(c_alpha / (beta * tail_tol)) / beta, 0.0)


def algebraic_horizon(c_alpha, beta, tail_tol):
    return (c_alpha / ((beta - 1.0) * tail_tol)) ** (1.0 / (beta - 1.0))


def exponential_kernel(beta: float, c_alpha: Optional[float] = None, evaluate=None,
                       tail=None, tail_tol: float = DEFAULT_TAIL_TOL) -> DelayKernel:
    """Default alpha(s) = beta e^{-beta s}, for which C_alpha = beta."""
    beta = _finite("beta", beta)
    if beta <= 0:
        raise ValidationError("exponential kernel needs beta > 0")
    if tail_tol <= 0:
        raise ValidationError("tail_tol must be > 0")
    if evaluate is None:
        evaluate = functools.partial(_exp_density, beta)
        tail = functools.partial(_exp_tail, beta)
        c_alpha = beta if c_alpha is None else c_alpha
    if c_alpha is None or c_alpha <= 0:
        raise ValidationError("exponential kernel needs C_alpha > 0")
    horizon = exponential_horizon(c_alpha, beta, tail_tol)
    kernel = DelayKernel(kind="exponential", horizon=horizon, c_alpha=float(c_alpha), beta=beta,
                         tail_tol=tail_tol, evaluate=evaluate, tail_fn=tail)
    _check_bound(kernel, lambda s: c_alpha * np.exp(-beta * s))
    return kernel


def algebraic_kernel(beta: float, c_alpha: Optional[float] = None, evaluate=None,
                     tail=None, tail_tol: float = DEFAULT_TAIL_TOL) -> DelayKernel:
    """Default alpha(s) = (beta - 1)(1 + s)^{-beta}, for which C_alpha = beta - 1."""
    beta = _finite("beta", beta)
    if beta <= 1:
        raise ValidationError("algebraic kernel needs beta > 1")
    if tail_tol <= 0:
        raise ValidationError("tail_tol must be > 0")
    if evaluate is None:
        evaluate = functools.partial(_alg_density, beta)
        tail = functools.partial(_alg_tail, beta)
        c_alpha = beta - 1.0 if c_alpha is None else c_alpha
    if c_alpha is None or c_alpha <= 0:
        raise ValidationError("algebraic kernel needs C_alpha > 0")
    horizon = algebraic_horizon(c_alpha, beta, tail_tol)
    kernel = DelayKernel(kind="algebraic", horizon=horizon, c_alpha=float(c_alpha), beta=beta,
                         tail_tol=tail_tol, evaluate=evaluate, tail_fn=tail)
    _check_bound(kernel, lambda s: c_alpha / (1.0 + s ** beta))
    return kernel


def tabulated_kernel(lags, values, tail_tol: float = DEFAULT_TAIL_TOL) -> DelayKernel:
    lags = np.asarray(lags, dtype=float)
    values = np.asarray(values, dtype=float)
    if lags.ndim != 1 or lags.shape != values.shape or lags.size < 2:
        raise ValidationError("tabulated kernel needs matching 1-D lag/value arrays")
    if lags[0] != 0.0 or np.any(np.diff(lags) <= 0):
        raise ValidationError("tabulated lags must start at 0 and increase")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValidationError("tabulated kernel values must be finite and >= 0")
    evaluate = functools.partial(_tab_density, lags, values)
    return DelayKernel(kind="tabulated", horizon=float(lags[-1]), tail_tol=tail_tol, evaluate=evaluate)


def _check_bound(kernel, bound, n=2000):
    s = np.concatenate([[0.0], np.geomspace(1e-6, max(kernel.horizon, 1.0), n)])
    vals = kernel.evaluate(s)
    if np.any(vals < 0):
        raise ValidationError("kernel takes negative values")
    if np.any(vals > bound(s) * (1.0 + 1e-12) + 1e-300):
        raise ValidationError(f"{kernel.kind} kernel violates its C_alpha bound")


def make_kernel(spec: Mapping) -> DelayKernel:
    spec = dict(spec)
    kind = _kind_key(spec.pop("kind", ""))
    tail_tol = float(spec.pop("tail_tol", DEFAULT_TAIL_TOL))
    try:
        if kind == "point_mass":
            return point_mass_kernel(**spec)
        if kind == "exponential":
            return exponential_kernel(tail_tol=tail_tol, **spec)
        if kind == "algebraic":
            return algebraic_kernel(tail_tol=tail_tol, **spec)
        if kind == "tabulated":
            return tabulated_kernel(spec.pop("lags"), spec.pop("values"), tail_tol=tail_tol)
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"bad parameters for kernel {kind}: {exc}") from None
    raise ValidationError(f"unknown kernel kind {kind!r}")


# ---------------------------------------------------------------------------
# Age grid and densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgeGrid:
    delta: float
    n_cells: int

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValidationError("grid delta must be a positive finite number")
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValidationError("grid needs at least two cells")

    @classmethod
    def from_span(cls, delta: float, a_max: float) -> "AgeGrid":
        delta = _finite("delta", delta)
        a_max = _finite("a_max", a_max)
        if delta <= 0 or a_max <= 0:
            raise ValidationError("delta and a_max must be > 0")
        n = int(round(a_max / delta))
        if n < 2 or abs(n * delta - a_max) > 1e-9 * a_max:
            raise ValidationError(f"a_max={a_max} is not an integer multiple of delta={delta}")
        return cls(delta, n)

    @classmethod
    def for_coefficient(cls, S: FiringCoefficient, delta: float, tail: float = AGE_TAIL_TOL) -> "AgeGrid":
        """Smallest grid whose equilibrium tail mass exp(-s0 (a_max - sigma)) is below ``tail``."""
        a_needed = S.sigma + math.log(1.0 / tail) / S.s0
        return cls(float(delta), max(int(math.ceil(a_needed / delta - 1e-9)), 2))

    @property
    def a_max(self) -> float:
        return self.n_cells * self.delta

    @functools.cached_property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.delta

    def tail_bound(self, S: FiringCoefficient) -> float:
        return math.exp(-S.s0 * max(self.a_max - S.sigma, 0.0))


@dataclass(frozen=True, eq=False)
class AgeDensity:
    """Cell-averaged density n(a); mass is sum(cells) * delta."""

    grid: AgeGrid
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=float)
        if cells.shape != (self.grid.n_cells,):
            raise ValidationError(f"expected {self.grid.n_cells} cells, got shape {cells.shape}")
        if not np.all(np.isfinite(cells)):
            raise ValidationError("density has non-finite cells")
        if np.any(cells < 0):
            raise ValidationError("density has negative cells")
        cells = cells.copy()
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    def mass(self) -> float:
        return math.fsum(self.cells) * self.grid.delta

    def normalized(self) -> "AgeDensity":
        m = self.mass()
        if m <= 0:
            raise ValidationError("cannot normalize a zero density")
        return AgeDensity(self.grid, self.cells / m)

    @classmethod
    def zeros(cls, grid: AgeGrid) -> "AgeDensity":
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def uniform(cls, grid: AgeGrid, lo: float = 0.0, hi: Optional[float] = None) -> "AgeDensity":
        """Unit-mass density uniform on [lo, hi]; endpoints must fall on cell edges."""
        hi = grid.a_max if hi is None else hi
        i0 = int(round(lo / grid.delta))
        i1 = int(round(hi / grid.delta))
        if not (0 <= i0 < i1 <= grid.n_cells):
            raise ValidationError(f"uniform support [{lo}, {hi}] not inside the grid")
        cells = np.zeros(grid.n_cells)
        cells[i0:i1] = 1.0 / ((i1 - i0) * grid.delta)
        return cls(grid, cells)

    @classmethod
    def from_function(cls, grid: AgeGrid, f: Callable, normalize: bool = True) -> "AgeDensity":
        dens = cls(grid, np.asarray(f(grid.midpoints), dtype=float))
        return dens.normalized() if normalize else dens


def mass(density: AgeDensity) -> float:
    return density.mass()


# ---------------------------------------------------------------------------
# Firing-rate history
# ---------------------------------------------------------------------------


class HistoryFunction:
    """Prescribed past rate r0(t), t < 0, plus the computed trace r(t_k), t_k = k dt.

    The past is piecewise linear through the tabulated points and constant
    (first/last value) outside them; a constant history has no table.
    """

    def __init__(self, dt: float, value: float = 0.0, times=None, rates=None):
        self.dt = _finite("dt", dt)
        if self.dt <= 0:
            raise ValidationError("history dt must be > 0")
        if times is None:
            value = _finite("history value", value)
            if value < 0:
                raise ValidationError("past rate must be >= 0")
            self._times = np.zeros(0)
            self._rates = np.zeros(0)
            self.first_value = self.last_value = value
        else:
            t = np.asarray(times, dtype=float)
            r = np.asarray(rates, dtype=float)
            if t.ndim != 1 or t.shape != r.shape or t.size == 0:
                raise ValidationError("tabulated history needs matching 1-D arrays")
            if np.any(np.diff(t) <= 0) or t[-1] > 0:
                raise ValidationError("tabulated history times must increase and be <= 0")
            if np.any(r < 0) or not np.all(np.isfinite(r)):
                raise ValidationError("past rates must be finite and >= 0")
            self._times, self._rates = t, r
            self.first_value, self.last_value = float(r[0]), float(r[-1])
        self.sup_bound = float(max(self.first_value, self.last_value,
                                   self._rates.max() if self._rates.size else 0.0))
        self._computed = np.empty(1024)
        self._n = 0

    @classmethod
    def constant(cls, dt, value):
        return cls(dt, value=value)

    @property
    def table_start(self) -> float:
        """Earliest tabulated time (0 for a constant history)."""
        return float(self._times[0]) if self._times.size else 0.0

    def past(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t >= 0):
            raise ValidationError("past() is only defined for t < 0")
        if not self._times.size:
            return np.full(t.shape, self.first_value) if t.ndim else self.first_value
        out = np.interp(t, self._times, self._rates, left=self.first_value, right=self.last_value)
        return out if t.ndim else float(out)

    def append(self, r: float) -> None:
        if self._n == self._computed.size:
            self._computed = np.concatenate([self._computed, np.empty(self._computed.size)])
        self._computed[self._n] = r
        self._n += 1

    def __len__(self):
        return self._n

    @property
    def computed_values(self) -> np.ndarray:
        return self._computed[: self._n]

    @property
    def computed_times(self) -> np.ndarray:
        return np.arange(self._n) * self.dt

    def value_at_index(self, k: int) -> float:
        """r(k dt) for computed k >= 0."""
        if not 0 <= k < self._n:
            raise ValidationError(f"history has no computed sample at index {k}")
        return float(self._computed[k])

    def lookup(self, t: float) -> float:
        """r(t): past(t) for t < 0, exact stored sample for t >= 0 on the grid."""
        if t < 0:
            return float(self.past(t))
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * max(self.dt, abs(t)):
            raise ValidationError(f"t={t} is not on the history grid")
        return self.value_at_index(k)


@dataclass(frozen=True, eq=False)
class Equilibrium:
    r_star: float
    x_star: float
    density: AgeDensity


def check_coefficient(S: FiringCoefficient, n_samples: int = 10_000, seed: int = 0,
                      a_max: float = 50.0, x_max: float = 50.0) -> None:
    """Spot-check the bound, lower-bound and Lipschitz inequalities on random triples."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, a_max, n_samples)
    x = rng.uniform(0.0, x_max, n_samples)
    x2 = rng.uniform(0.0, x_max, n_samples)
    s1 = S.evaluate(a, x)
    s2 = S.evaluate(a, x2)
    tol = 1e-12 * max(S.sup_norm, 1.0)
    if np.any(s1 < 0):
        raise ValidationError("S takes negative values")
    if np.any(s1 > S.sup_norm + tol):
        raise ValidationError("S exceeds its declared sup norm")
    if np.any(s1[a > S.sigma] < S.s0 - tol):
        raise ValidationError("S drops below s0 above sigma")
    if np.any(np.abs(s1 - s2) > S.lipschitz_ell * np.abs(x - x2) + tol):
        raise ValidationError("S violates its declared Lipschitz constant")


def check_grid(S: FiringCoefficient, grid: AgeGrid, tail: float = AGE_TAIL_TOL) -> None:
    if grid.a_max <= S.sigma:
        raise ValidationError(f"a_max={grid.a_max} must exceed sigma={S.sigma}")
    bound = grid.tail_bound(S)
    if bound > tail:
        log.warning("age truncation tail bound %.2e exceeds %.0e (a_max=%g)", bound, tail, grid.a_max)


def ensure_same_grid(p: AgeDensity, q: AgeDensity) -> None:
    if p.grid != q.grid:
        raise GridMismatch(f"grids differ: {p.grid} vs {q.grid}")
