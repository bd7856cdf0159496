import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from elapsedtime import NonConvergence, NumericalError, ValidationError
from elapsedtime.model import (
    AgeDensity,
    AgeGrid,
    Equilibrium,
    FiringCoefficient,
    HistoryFunction,
    algebraic_kernel,
    constant_coefficient,
    exponential_kernel,
    point_mass_kernel,
    step_coefficient,
    step_times_sigmoid,
)
from elapsedtime.simulate import (
    DiscreteDelay,
    DistributedDelay,
    Instantaneous,
    LinearFrozen,
    SimulationConfig,
    _damped_fixed_point,
    activity_distributed,
    discrete_equilibrium,
    firing_rate,
    simulate,
    solve_instantaneous_rate,
    step_transport,
)
from elapsedtime.steady import stationary_density, unique_equilibrium

SIGMOID = step_times_sigmoid(0.5, 0.5, 0.05)


def zero_coefficient():
    return FiringCoefficient(lambda x: 0.0 * np.asarray(x, dtype=float), 0.0, 0.0, 0.0, 0.0)


# --- transport ------------------------------------------------------------------


def test_zero_hazard_is_a_pure_shift():
    grid = AgeGrid.from_span(0.5, 3.0)
    n = AgeDensity(grid, [0.0, 0.4, 0.8, 0.0, 0.6, 0.2])
    out, fired = step_transport(n, zero_coefficient(), 1.0, 0.5)
    assert fired == 0.0
    # last cell keeps what reaches the end of the grid
    assert list(out.cells) == [0.0, 0.0, 0.4, 0.8, 0.0, 0.8]
    assert out.mass() == n.mass()


def test_transport_rejects_mismatched_step():
    grid = AgeGrid.from_span(0.5, 3.0)
    with pytest.raises(ValidationError):
        step_transport(AgeDensity.uniform(grid), constant_coefficient(1.0), 0.0, 0.25)


def test_single_cell_loses_exponential_fraction():
    grid = AgeGrid.from_span(0.01, 30.0)
    cells = np.zeros(grid.n_cells)
    cells[100] = 1.0 / grid.delta
    out, fired = step_transport(AgeDensity(grid, cells), constant_coefficient(1.0), 7.0, grid.delta)
    assert fired == pytest.approx(1.0 - math.exp(-0.01), rel=1e-14)
    assert out.cells[0] * grid.delta == pytest.approx(fired, rel=1e-14)
    assert out.mass() == pytest.approx(1.0, abs=1e-15)


# --- firing rate and activity ------------------------------------------------------


def test_firing_rate_constant_pulls_out():
    grid = AgeGrid.from_span(0.01, 30.0)
    n = AgeDensity.uniform(grid, 0.0, 2.0)
    assert firing_rate(n, constant_coefficient(2.5), 9.0) == pytest.approx(2.5, rel=1e-12)


def test_firing_rate_step_on_uniform():
    grid = AgeGrid.from_span(0.01, 30.0)
    n = AgeDensity.uniform(grid, 0.0, 2.0)
    assert firing_rate(n, step_coefficient(1.0), 0.0) == pytest.approx(0.5, abs=1e-8)


def test_firing_rate_at_equilibrium():
    S = step_coefficient(1.0)
    grid = AgeGrid.for_coefficient(S, 1e-4)
    eq = unique_equilibrium(S, grid)
    assert firing_rate(eq.density, S, eq.x_star) == pytest.approx(eq.r_star, abs=1e-6)


def _history_with(dt, past, computed):
    h = HistoryFunction.constant(dt, past)
    for r in computed:
        h.append(r)
    return h


def test_activity_of_constant_rate_is_that_rate():
    dt = 0.01
    for kernel in (exponential_kernel(1.0), exponential_kernel(3.0), algebraic_kernel(3.0)):
        h = _history_with(dt, 0.8, [0.8] * 301)
        x = activity_distributed(h, kernel, 3.0, dt)
        assert x == pytest.approx(0.8, rel=kernel.tail_tol + 1e-4)


def test_activity_of_switched_off_history():
    dt = 0.01
    h = _history_with(dt, 1.0, [0.0] * 201)
    x = activity_distributed(h, exponential_kernel(1.0), 2.0, dt)
    assert x == pytest.approx(math.exp(-2.0), abs=1e-3)


def test_activity_with_tabulated_past():
    dt = 0.01
    h = HistoryFunction(dt, times=[-5.0, 0.0], rates=[0.0, 1.0])
    for _ in range(101):
        h.append(0.0)
    # past r0(s) = 1 + s / 5 on [-5, 0], zero before; t = 1
    s = np.linspace(-5.0, 0.0, 200_001)
    integrand = np.exp(-(1.0 - s)) * (1.0 + s / 5.0)
    expected = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s)))
    assert activity_distributed(h, exponential_kernel(1.0), 1.0, dt) == pytest.approx(expected, rel=1e-4)


def test_point_mass_activity_is_a_lookup():
    dt = 0.1
    h = _history_with(dt, 0.3, [1.0, 2.0, 3.0, 4.0])
    kernel = point_mass_kernel(0.2)
    assert activity_distributed(h, kernel, 0.3, dt) == 2.0
    assert activity_distributed(h, kernel, 0.1, dt) == 0.3


def test_activity_refuses_gaps():
    h = _history_with(0.1, 0.3, [1.0, 2.0])
    with pytest.raises(ValidationError):
        activity_distributed(h, exponential_kernel(1.0), 0.5, 0.1)


# --- instantaneous fixed point ---------------------------------------------------------


def test_fixed_point_without_coupling_is_one_evaluation():
    grid = AgeGrid.from_span(0.01, 40.0)
    n = AgeDensity.uniform(grid, 0.0, 4.0)
    S = step_coefficient(1.0)
    assert solve_instantaneous_rate(n, S, 123.0) == firing_rate(n, S, 0.0)


def test_damped_iteration_on_reflecting_map():
    r, iterations = _damped_fixed_point(lambda r: 1.0 - r, 0.0)
    assert r == pytest.approx(0.5, abs=1e-12)
    assert iterations < 100


def test_damped_iteration_reports_nonconvergence():
    with pytest.raises(NonConvergence) as info:
        _damped_fixed_point(lambda r: 3.0 - 3.0 * r, 0.0, max_iter=50)
    assert info.value.residual > 0


def test_fixed_point_at_equilibrium():
    grid = AgeGrid.for_coefficient(SIGMOID, 1e-4)
    eq = unique_equilibrium(SIGMOID, grid)
    scheme = discrete_equilibrium(SIGMOID, grid, eq.r_star)
    r = solve_instantaneous_rate(scheme.density, SIGMOID, 0.1)
    assert r == pytest.approx(scheme.r_star, abs=1e-10)
    assert r == pytest.approx(eq.r_star, abs=1e-6)


# --- configuration -------------------------------------------------------------------


def test_config_rules():
    grid = AgeGrid.from_span(0.1, 10.0)
    with pytest.raises(ValidationError):
        SimulationConfig(Instantaneous(), 0.05, 1.0, grid)
    with pytest.raises(ValidationError):
        SimulationConfig(Instantaneous(), 0.1, 1.05, grid)
    with pytest.raises(ValidationError):
        SimulationConfig(Instantaneous(), 0.1, 1.0, grid, record_every=3)
    with pytest.raises(ValidationError):
        SimulationConfig(Instantaneous(), -0.1, 1.0, grid)
    cfg = SimulationConfig(Instantaneous(), 0.1, 1.0, grid, record_every=5)
    assert cfg.n_steps == 10 and cfg.n_records == 3


def test_delay_rounded_with_warning():
    grid = AgeGrid.from_span(0.1, 10.0)
    cfg = SimulationConfig(DiscreteDelay(0.93), 0.1, 1.0, grid)
    assert cfg.variant.d == pytest.approx(0.9)
    assert cfg.warnings and "rounded" in cfg.warnings[0]


def test_point_mass_kernel_becomes_discrete_delay():
    grid = AgeGrid.from_span(0.1, 10.0)
    cfg = SimulationConfig(DistributedDelay(point_mass_kernel(0.5)), 0.1, 1.0, grid)
    assert isinstance(cfg.variant, DiscreteDelay) and cfg.variant.d == 0.5


def test_initial_mass_must_be_one():
    grid = AgeGrid.from_span(0.1, 40.0)
    n0 = AgeDensity(grid, np.full(grid.n_cells, 0.5))
    with pytest.raises(ValidationError):
        simulate(SimulationConfig(Instantaneous(), 0.1, 1.0, grid), constant_coefficient(1.0), n0)


def test_nan_aborts_run():
    bad = FiringCoefficient(lambda x: np.where(np.asarray(x) > 0.5, np.nan, 1.0), 0.0, 0.0, 1.0, 1.0)
    grid = AgeGrid.from_span(0.1, 40.0)
    cfg = SimulationConfig(DiscreteDelay(0.5), 0.1, 5.0, grid)
    with pytest.raises(NumericalError):
        simulate(cfg, bad, AgeDensity.uniform(grid, 0.0, 1.0), HistoryFunction.constant(0.1, 1.0))


# --- driver examples -------------------------------------------------------------------


def test_frozen_run_from_stationary_state_stays_put():
    S = step_coefficient(1.0)
    grid = AgeGrid.for_coefficient(S, 1e-2)
    rate, nbar = stationary_density(S, 0.3, grid)
    ref = Equilibrium(rate, 0.3, nbar)
    trace = simulate(SimulationConfig(LinearFrozen(0.3), 1e-2, 10.0, grid), S, nbar, reference=ref)
    assert np.max(trace.tv) <= 1e-9


def test_delay_is_irrelevant_without_coupling():
    S = step_coefficient(1.0)
    grid = AgeGrid.for_coefficient(S, 1e-2)
    n0 = AgeDensity.uniform(grid, 0.5, 3.0)
    a = simulate(SimulationConfig(DiscreteDelay(1.0), 1e-2, 10.0, grid), S, n0, HistoryFunction.constant(1e-2, 2.0))
    b = simulate(SimulationConfig(Instantaneous(), 1e-2, 10.0, grid), S, n0)
    np.testing.assert_array_equal(a.r, b.r)
    np.testing.assert_array_equal(a.mass, b.mass)
    np.testing.assert_array_equal(a.final_density.cells, b.final_density.cells)


def test_distributed_step_run_settles_at_half():
    S = step_coefficient(1.0)
    dt = 1e-2
    grid = AgeGrid.for_coefficient(S, dt)
    n0 = AgeDensity.uniform(grid, 0.0, 2.0)
    cfg = SimulationConfig(DistributedDelay(exponential_kernel(1.0)), dt, 40.0, grid)
    trace = simulate(cfg, S, n0, HistoryFunction.constant(dt, 0.5))
    assert np.max(np.abs(trace.mass - 1.0)) <= 1e-9
    assert trace.r[-1] == pytest.approx(0.5, abs=1e-4)
    assert trace.x[-1] == pytest.approx(0.5, abs=1e-4)


def test_record_every_thins_the_trace():
    S = constant_coefficient(1.0)
    grid = AgeGrid.for_coefficient(S, 0.05)
    n0 = AgeDensity.uniform(grid, 0.0, 1.0)
    full = simulate(SimulationConfig(LinearFrozen(1.0), 0.05, 5.0, grid), S, n0)
    thin = simulate(SimulationConfig(LinearFrozen(1.0), 0.05, 5.0, grid, record_every=4), S, n0)
    assert len(full) == 101 and len(thin) == 26
    np.testing.assert_array_equal(full.r[::4], thin.r)


def test_history_must_be_fresh():
    S = constant_coefficient(1.0)
    grid = AgeGrid.for_coefficient(S, 0.05)
    h = HistoryFunction.constant(0.05, 1.0)
    h.append(1.0)
    with pytest.raises(ValidationError):
        simulate(SimulationConfig(Instantaneous(), 0.05, 1.0, grid), S, AgeDensity.uniform(grid), h)


# --- properties --------------------------------------------------------------------------

VARIANTS = ["instantaneous", "discrete", "exponential", "algebraic", "frozen"]


def _variant(kind, d, beta):
    if kind == "instantaneous":
        return Instantaneous()
    if kind == "discrete":
        return DiscreteDelay(d)
    if kind == "exponential":
        return DistributedDelay(exponential_kernel(beta))
    if kind == "algebraic":
        return DistributedDelay(algebraic_kernel(1.0 + beta))
    return LinearFrozen(d)


run_inputs = st.fixed_dictionaries({
    "kind": st.sampled_from(VARIANTS),
    "sigma": st.sampled_from([0.0, 0.2, 0.5, 1.0]),
    "base": st.floats(0.3, 2.0),
    "ell": st.floats(-0.25, 0.5),
    "d": st.sampled_from([0.2, 0.6, 1.0]),
    "beta": st.floats(1.5, 3.0),
    "past": st.floats(0.0, 3.0),
    "seed": st.integers(0, 2**31),
})


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(run_inputs)
def test_mass_positivity_and_rate_bound(p):
    S = step_times_sigmoid(p["sigma"], p["base"], p["ell"])
    dt = 0.02
    grid = AgeGrid.for_coefficient(S, dt, tail=1e-8)
    rng = np.random.default_rng(p["seed"])
    n0 = AgeDensity(grid, rng.uniform(0.0, 1.0, grid.n_cells) * (grid.midpoints < 6.0)).normalized()
    cfg = SimulationConfig(_variant(p["kind"], p["d"], p["beta"]), dt, 4.0, grid)
    trace = simulate(cfg, S, n0, HistoryFunction.constant(dt, p["past"]))
    assert np.max(np.abs(trace.mass - 1.0)) <= 1e-9
    assert np.all(trace.final_density.cells >= 0)
    assert np.all(trace.r >= 0)
    assert np.all(trace.r <= S.sup_norm * (1.0 + 1e-12))


def test_frozen_constant_run_decays_like_tail_mass():
    S = constant_coefficient(1.0)
    dt = 2.5e-3
    grid = AgeGrid.for_coefficient(S, dt)
    rate, nbar = stationary_density(S, 1.0, grid)
    n0 = AgeDensity.uniform(grid, 0.0, 1.0)
    trace = simulate(SimulationConfig(LinearFrozen(1.0), dt, 20.0, grid, record_every=8), S, n0,
                     reference=Equilibrium(rate, 1.0, nbar))
    keep = (trace.times >= 2.0) & (trace.times <= 20.0)
    C = np.max(trace.tv[keep] * np.exp(0.95 * trace.times[keep]))
    assert C < 10.0
    assert trace.tv[-1] <= C * math.exp(-0.95 * 20.0)


@pytest.mark.parametrize("variant", [Instantaneous(), DiscreteDelay(1.0), "exponential"], ids=str)
def test_grid_convergence_is_first_order(variant):
    S = step_times_sigmoid(0.5, 0.5, 0.3)
    rates = []
    for delta in (0.05, 0.025, 0.0125, 0.00625):
        grid = AgeGrid.from_span(delta, 60.0)
        n0 = AgeDensity.from_function(grid, lambda a: np.exp(-0.5 * (a - 2.0) ** 2))
        v = DistributedDelay(exponential_kernel(1.0)) if variant == "exponential" else variant
        cfg = SimulationConfig(v, delta, 6.0, grid, record_every=int(round(0.05 / delta)))
        rates.append(simulate(cfg, S, n0, HistoryFunction.constant(delta, 0.6)).r)
    diffs = [np.max(np.abs(rates[i] - rates[i + 1])) for i in range(3)]
    orders = [math.log2(diffs[i] / diffs[i + 1]) for i in range(2)]
    assert min(orders) >= 0.9
