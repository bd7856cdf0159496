"""Acceptance suite: one recorded PASS/FAIL line per criterion.

Scenario-backed criteria run the shipped scenario files through the CLI
into a temporary directory; the determinism check reruns every one of
them and compares the artifacts byte for byte.
"""

import json
import math
import time

import numpy as np
import pytest
import yaml

from elapsedtime import cli
from elapsedtime.analysis import measure_linear_gap, random_probe
from elapsedtime.artifacts import read_trace_csv
from elapsedtime.model import (
    AgeGrid,
    HistoryFunction,
    algebraic_kernel,
    constant_coefficient,
    exponential_kernel,
    step_coefficient,
    step_times_linear,
    step_times_sigmoid,
)
from elapsedtime.simulate import (
    DiscreteDelay,
    DistributedDelay,
    Instantaneous,
    LinearFrozen,
    SimulationConfig,
    simulate,
)
from elapsedtime.steady import solve_steady_state
from elapsedtime.volterra import (
    build_exponential_certificate,
    check_comparison_discrete,
    convolution_decay_exponent,
    delayed_problem_for,
)

from cases import convolution_comparison_round, delayed_comparison_round, random_admissible_constants
from conftest import SCENARIOS

SCENARIO_NAMES = ["steady_step", "linear_gap", "discrete_delay", "exponential_kernel", "algebraic_kernel"]


def _run_scenarios(root):
    results = {}
    for name in SCENARIO_NAMES:
        raw = yaml.safe_load((SCENARIOS / f"{name}.yaml").read_text())
        raw["output_dir"] = f"out_{name}"
        path = root / f"{name}.yaml"
        path.write_text(yaml.safe_dump(raw, sort_keys=False))
        t0 = time.perf_counter()
        code = cli.run_scenario(path)
        results[name] = {"code": code, "seconds": time.perf_counter() - t0, "out": root / f"out_{name}"}
    return results


@pytest.fixture(scope="session")
def scenario_runs(tmp_path_factory):
    return _run_scenarios(tmp_path_factory.mktemp("first"))


def _load(run, name):
    return json.loads((run["out"] / name).read_text())


# --- 1 -------------------------------------------------------------------------------


def test_criterion_01_steady_states(verdict):
    cases = [
        ("Step(sigma=1)", step_coefficient(1.0), 0.5),
        ("Constant(s0=2)", constant_coefficient(2.0), 2.0),
        ("linear phi=1+0.1X", step_times_linear(0.0, 1.0, 0.1, 20.0), 1.0 / (1.0 - 0.1)),
    ]
    ok, parts = True, []
    for label, S, expected in cases:
        t0 = time.perf_counter()
        roots = solve_steady_state(S, AgeGrid.for_coefficient(S, 1e-4)).roots
        seconds = time.perf_counter() - t0
        good = len(roots) == 1 and abs(roots[0] - expected) <= 1e-6 and seconds < 1.0
        ok &= good
        parts.append(f"{label} r*={roots[0] if roots else None:.9f} ({seconds:.2f}s)")
    verdict(1, "steady states within 1e-6 at delta=1e-4, <1 s each", ok, "; ".join(parts))


# --- 2 -------------------------------------------------------------------------------


def _random_run(kind, rng):
    S = step_times_sigmoid(float(rng.choice([0.0, 0.25, 0.5, 1.0])), float(rng.uniform(0.3, 2.0)),
                           float(rng.uniform(-0.2, 0.4)))
    dt = 0.01
    grid = AgeGrid.for_coefficient(S, dt)
    n0 = random_probe(grid, rng)
    if rng.uniform() < 0.5:
        history = HistoryFunction.constant(dt, float(rng.uniform(0, 2)))
    else:
        history = HistoryFunction(dt, times=[-3.0, -1.0, 0.0], rates=rng.uniform(0, 2, 3))
    if kind == "instantaneous":
        variant = Instantaneous()
    elif kind == "discrete_delay":
        variant = DiscreteDelay(float(rng.choice([0.3, 1.0, 2.0])))
    elif kind == "distributed_delay":
        beta = float(rng.uniform(0.5, 3.0))
        variant = DistributedDelay(exponential_kernel(beta) if rng.uniform() < 0.5 else algebraic_kernel(1.5 + beta))
    else:
        variant = LinearFrozen(float(rng.uniform(0, 2)))
    trace = simulate(SimulationConfig(variant, dt, 10.0, grid), S, n0, history)
    return float(np.max(np.abs(trace.mass - 1.0)))


def test_criterion_02_mass_conservation(verdict):
    rng = np.random.default_rng(20)
    t0 = time.perf_counter()
    worst = {}
    for kind in ("instantaneous", "discrete_delay", "distributed_delay", "linear_frozen"):
        worst[kind] = max(_random_run(kind, rng) for _ in range(20))
    seconds = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-9 and seconds < 30.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(2, "max |mass-1| <= 1e-9 over 4x20 random runs, <30 s", ok, f"{detail} ({seconds:.1f}s)")


# --- 3 -------------------------------------------------------------------------------


def test_criterion_03_linear_gap(verdict):
    S = constant_coefficient(1.0)
    window = (2.0, 20.0)
    dt = 2.5e-3
    t0 = time.perf_counter()
    report = measure_linear_gap(S, 1.0, AgeGrid.for_coefficient(S, dt), dt, 20.0, probes=5, seed=3, window=window)
    seconds = time.perf_counter() - t0
    half = measure_linear_gap(S, 1.0, AgeGrid.for_coefficient(S, dt / 2), dt / 2, 20.0, probes=5, seed=3,
                              window=window)
    r2 = min(p["r_squared"] for p in report.probes)
    drift = abs(half.lambda_hat - report.lambda_hat) / report.lambda_hat
    ok = abs(report.lambda_hat - 1.0) <= 0.05 and r2 > 0.999 and drift <= 0.05 and seconds < 10.0
    verdict(3, "linear gap of Constant(1) = 1.00 +- 0.05, stable under dt/2", ok,
            f"lambda={report.lambda_hat:.5f} min r2={r2:.6f} dt/2 lambda={half.lambda_hat:.5f} "
            f"drift={100 * drift:.2f}% ({seconds:.1f}s)")


# --- 4, 5, 6 ---------------------------------------------------------------------------


def test_criterion_04_discrete_delay(verdict, scenario_runs):
    run = scenario_runs["discrete_delay"]
    fits = _load(run, "rate_fit.json")
    trace = read_trace_csv(run["out"] / "trace.csv")
    tv_end = float(trace["tv"][trace["t"] == 100.0][0])
    ok = (run["code"] == 0 and run["seconds"] < 60.0 and tv_end <= 1e-6
          and all(fits[s]["rate"] > 0 and fits[s]["r_squared"] > 0.99 for s in ("tv", "r")))
    verdict(4, "discrete delay: positive rates with r2 > 0.99, TV(100) <= 1e-6, <60 s", ok,
            f"tv rate={fits['tv']['rate']:.4f} (r2 {fits['tv']['r_squared']:.5f}), "
            f"|r-r*| rate={fits['r']['rate']:.4f} (r2 {fits['r']['r_squared']:.5f}), "
            f"TV(100)={tv_end:.2e} ({run['seconds']:.1f}s)")


def test_criterion_05_exponential_kernel(verdict, scenario_runs):
    run = scenario_runs["exponential_kernel"]
    fits = _load(run, "rate_fit.json")
    lam = _load(run, "linear_gap.json")["lambda_hat"]
    beta = 1.0
    floor = 0.5 * min(lam, beta)
    ok = (run["code"] == 0 and run["seconds"] < 60.0
          and all(fits[s]["rate"] > 0 and fits[s]["r_squared"] > 0.99 for s in ("tv", "r", "x"))
          and fits["x"]["rate"] >= floor)
    rates = ", ".join(f"{s} {fits[s]['rate']:.4f} (r2 {fits[s]['r_squared']:.5f})" for s in ("tv", "r", "x"))
    verdict(5, "exponential kernel: positive rates, |X-X*| rate >= 0.5 min(lambda, beta)", ok,
            f"{rates}; floor {floor:.4f} from lambda={lam:.4f} ({run['seconds']:.1f}s)")


def test_criterion_06_algebraic_kernel(verdict, scenario_runs):
    run = scenario_runs["algebraic_kernel"]
    fit = _load(run, "rate_fit.json")["x"]
    ok = (run["code"] == 0 and run["seconds"] < 300.0
          and abs(fit["rate"] - 2.0) <= 0.3 and fit["r_squared"] > 0.99)
    verdict(6, "algebraic kernel: |X-X*| power 2 +- 0.3 on [50, 500], <5 min", ok,
            f"power={fit['rate']:.4f} r2={fit['r_squared']:.6f} ({run['seconds']:.1f}s)")


# --- 7, 8 --------------------------------------------------------------------------------


def test_criterion_07_comparison_lemmas(verdict):
    rng = np.random.default_rng(7)
    totals = {}
    for label, round_fn in (("delayed", delayed_comparison_round), ("convolution", convolution_comparison_round)):
        acc = {"upper": [0, 0, 0], "lower": [0, 0, 0]}
        for _ in range(100):
            for side, counts in round_fn(rng).items():
                acc[side] = [a + b for a, b in zip(acc[side], counts)]
        totals[label] = acc
    violations = sum(acc[s][2] for acc in totals.values() for s in acc)
    passing = {label: {s: acc[s][1] for s in acc} for label, acc in totals.items()}
    ok = violations == 0 and all(n > 0 for sides in passing.values() for n in sides.values())
    verdict(7, "comparison lemmas on 100 random problems each, zero violations", ok,
            f"violations={violations}; passing candidates {passing}")


def test_criterion_08_certificate_soundness(verdict):
    rng = np.random.default_rng(8)
    admissible, inadmissible, worst, failures = 0, [], math.inf, 0
    while admissible < 50:
        c = random_admissible_constants(rng)
        cert = build_exponential_certificate("discrete_delay", c)
        if not cert.admissible:
            # reported as drawn, never adjusted
            assert cert.A is None and cert.constants_used["ell"] == c["ell"]
            inadmissible.append(round(c["ell"] / cert.ell_bound, 3))
            continue
        admissible += 1
        p = delayed_problem_for(cert, T=40.0, dt=c["d"] / 10)
        passes, margin = check_comparison_discrete(p, cert.evaluate(p.times), "upper")
        worst = min(worst, margin)
        failures += int(not (passes and margin >= 0))
    verdict(8, "50 admissible exponential certificates pass as upper solutions", failures == 0,
            f"failures={failures}, smallest margin={worst:.3e}; {len(inadmissible)} inadmissible draws "
            f"reported (ell/bound = {sorted(inadmissible)})")


# --- 9 ------------------------------------------------------------------------------------


def test_criterion_09_convolution_decay(verdict):
    examples = [
        ("(1+t)^-2 * (1+t)^-2", lambda t: (1 + t) ** -2.0, lambda t: (1 + t) ** -2.0, 1.0),
        ("(1+t)^-1.5 * (1+t)^-3", lambda t: (1 + t) ** -1.5, lambda t: (1 + t) ** -3.0, 1.5),
        ("e^-t * (1+t)^-2", lambda t: np.exp(-t), lambda t: (1 + t) ** -2.0, 1.0),
    ]
    t0 = time.perf_counter()
    parts, ok = [], True
    for label, f, g, expected in examples:
        fit = convolution_decay_exponent(f, g, T=1000.0)
        good = abs(fit.exponent - expected) <= 0.15 and not fit.flagged
        ok &= good
        parts.append(f"{label}: {fit.exponent:.3f} vs {expected} {'ok' if good else 'MISS'}")
    seconds = time.perf_counter() - t0
    ok &= seconds < 10.0
    verdict(9, "convolution decay exponents equal min{a, b-1} +- 0.15", ok, f"{'; '.join(parts)} ({seconds:.1f}s)")


# --- 10 -----------------------------------------------------------------------------------


def _manifest_core(path):
    doc = json.loads(path.read_text())
    for key in ("wall_clock", "config", "tasks"):
        doc.pop(key, None)
    return doc


def test_criterion_10_determinism(verdict, scenario_runs, tmp_path):
    second = _run_scenarios(tmp_path)
    differing = []
    compared = 0
    for name in SCENARIO_NAMES:
        a, b = scenario_runs[name]["out"], second[name]["out"]
        names = sorted(p.name for p in a.iterdir())
        if names != sorted(p.name for p in b.iterdir()):
            differing.append(f"{name}: file lists differ")
            continue
        for fname in names:
            compared += 1
            if fname == "manifest.json":
                same = _manifest_core(a / fname) == _manifest_core(b / fname)
            else:
                same = (a / fname).read_bytes() == (b / fname).read_bytes()
            if not same:
                differing.append(f"{name}/{fname}")
    codes = [second[n]["code"] for n in SCENARIO_NAMES]
    ok = not differing and all(c == 0 for c in codes)
    verdict(10, "repeated runs reproduce identical numeric artifacts", ok,
            f"{compared} artifacts across {len(SCENARIO_NAMES)} scenarios; differing: {differing or 'none'}")
