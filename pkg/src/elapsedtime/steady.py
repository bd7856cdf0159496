"""Survival integral, equilibrium rates and equilibrium densities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .model import AgeDensity, AgeGrid, Equilibrium, FiringCoefficient, check_grid

SCAN_POINTS = 512
ROOT_RESIDUAL = 1e-10


def midpoint_log_survival(S: FiringCoefficient, x: float, grid: AgeGrid) -> np.ndarray:
    """int_0^{a_i} S(s, x) ds at every cell midpoint a_i (exact for separable S)."""
    return S.rate_level(x) * S.active_length(0.0, grid.midpoints)


def survival_integral(S: FiringCoefficient, r: float, grid: AgeGrid) -> float:
    """I(r) = int_0^inf exp(-int_0^a S(s, r) ds) da by the composite midpoint rule."""
    if grid.a_max <= S.sigma:
        raise ValidationError(f"a_max={grid.a_max} <= sigma={S.sigma}: tail not controlled")
    check_grid(S, grid)
    return _survival_sum(S.rate_level(r), S.active_length(0.0, grid.midpoints), grid.delta)


def _survival_sum(level, active, delta):
    value = float(np.sum(np.exp(-level * active))) * delta
    if not math.isfinite(value) or value <= 0:
        raise NumericalError(f"survival integral is not finite/positive (phi={level}): {value}")
    return value


@dataclass
class RootReport:
    roots: list
    residuals: list
    bracket_scan: list = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "roots": list(self.roots),
            "residuals": list(self.residuals),
            "scan": [{"r_lo": lo, "r_hi": hi, "sign_change": flag} for lo, hi, flag in self.bracket_scan],
        }


def _bisect(g, lo, glo, hi, ghi, tol=ROOT_RESIDUAL, max_iter=200):
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= tol * 1e-2 or hi - lo <= 4 * np.finfo(float).eps * hi:
            return mid, gm
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
    return (lo, glo) if abs(glo) < abs(ghi) else (hi, ghi)


def solve_steady_state(S: FiringCoefficient, grid: AgeGrid, r_max_scan: float | None = None,
                       n_scan: int = SCAN_POINTS) -> RootReport:
    """All roots of g(r) = r I(r) - 1 found by a log-spaced scan plus bisection.

    Every root satisfies r* <= sup S, so the default scan ceiling is 2 sup S;
    the factor covers the O(delta^2) quadrature shift of discrete roots.
    """
    if r_max_scan is None:
        r_max_scan = 2.0 * S.sup_norm
    if not (math.isfinite(r_max_scan) and r_max_scan > 0):
        raise ValidationError("r_max_scan must be a positive finite number")
    if r_max_scan < S.sup_norm:
        raise ValidationError(f"r_max_scan={r_max_scan} below sup S={S.sup_norm}")

    survival_integral(S, r_max_scan, grid)  # validates the grid once
    active = S.active_length(0.0, grid.midpoints)
    cache = {}

    def g(r):
        level = S.rate_level(r)
        if level not in cache:
            cache[level] = _survival_sum(level, active, grid.delta)
        return r * cache[level] - 1.0

    net = np.geomspace(r_max_scan * 1e-9, r_max_scan, n_scan)
    values = [g(r) for r in net]
    scan, roots, residuals = [], [], []
    for i in range(n_scan - 1):
        lo, hi, glo, ghi = net[i], net[i + 1], values[i], values[i + 1]
        flag = bool(glo == 0.0 or (glo < 0) != (ghi < 0))
        scan.append((float(lo), float(hi), flag))
        if not flag:
            continue
        root, resid = (lo, glo) if glo == 0.0 else _bisect(g, lo, glo, hi, ghi)
        if abs(resid) > ROOT_RESIDUAL:
            raise NumericalError(f"bisection stalled near r={root} with residual {resid:.2e}")
        if roots and abs(root - roots[-1]) <= 1e-8:
            continue
        roots.append(float(root))
        residuals.append(float(abs(resid)))
    return RootReport(roots, residuals, scan)


def _stationary_profile(S: FiringCoefficient, x: float, grid: AgeGrid) -> np.ndarray:
    """exp(-int_0^{a_i} S) at midpoints, last cell replaced by the geometric
    remainder beyond a_max (what the absorbing last transport cell holds)."""
    cells = np.exp(-midpoint_log_survival(S, x, grid))
    a = grid.midpoints
    q_last = math.exp(-float(S.segment_hazard(a[-1], a[-1] + grid.delta, x)))
    if q_last < 1.0:
        q_prev = math.exp(-float(S.segment_hazard(a[-2], a[-1], x)))
        cells[-1] = cells[-2] * q_prev / (1.0 - q_last)
    return cells


def stationary_density(S: FiringCoefficient, x: float, grid: AgeGrid):
    """Unit-mass stationary state of the linear problem with activity frozen at x.

    Returns ``(rate, density)`` with rate = 1 / I(x).
    """
    rate = 1.0 / survival_integral(S, x, grid)
    cells = rate * _stationary_profile(S, x, grid)
    return rate, AgeDensity(grid, cells / (math.fsum(cells) * grid.delta))


def equilibrium_density(S: FiringCoefficient, r_star: float, grid: AgeGrid) -> Equilibrium:
    """n*(a) = r* exp(-int_0^a S(s, r*) ds) on the cell midpoints, rescaled to unit mass."""
    resid = r_star * survival_integral(S, r_star, grid) - 1.0
    if not abs(resid) <= 1e-8:
        raise ValidationError(f"r*={r_star} is not an equilibrium rate (r I(r) - 1 = {resid:.2e})")
    cells = r_star * _stationary_profile(S, r_star, grid)
    m = math.fsum(cells) * grid.delta
    if abs(m - 1.0) > 1e-6:
        raise NumericalError(f"equilibrium mass drift {m - 1.0:.2e} exceeds 1e-6")
    return Equilibrium(r_star=float(r_star), x_star=float(r_star), density=AgeDensity(grid, cells / m))


def equilibria(S: FiringCoefficient, grid: AgeGrid, r_max_scan: float | None = None) -> list:
    return [equilibrium_density(S, r, grid) for r in solve_steady_state(S, grid, r_max_scan).roots]


def unique_equilibrium(S: FiringCoefficient, grid: AgeGrid, r_max_scan: float | None = None) -> Equilibrium:
    report = solve_steady_state(S, grid, r_max_scan)
    if len(report.roots) != 1:
        raise NumericalError(f"expected one equilibrium, found {len(report.roots)}: {report.roots}")
    return equilibrium_density(S, report.roots[0], grid)
