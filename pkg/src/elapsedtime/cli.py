"""Command-line scenario runner.

    elapsedtime run SCENARIO.yaml [MORE.yaml ...] [--jobs N]
    elapsedtime validate SCENARIO.yaml
    elapsedtime version

Exit status: 0 on success, 2 on a validation error, 3 on a numerical
failure (non-convergence, NaN). Errors are also written to errors.log in
the scenario's output directory.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import platform
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .analysis import fit_decay, measure_linear_gap, trace_deviations, tv_distance
from .artifacts import write_density_csv, write_json, write_trace_csv
from .config import Scenario, validate_scenario
from .errors import ConfigError, ElapsedTimeError, InsufficientData, NumericalError, ValidationError
from .model import Equilibrium
from .simulate import SimulationConfig, discrete_equilibrium, simulate
from .steady import equilibrium_density, solve_steady_state, stationary_density
from .volterra import (
    build_algebraic_certificate,
    build_exponential_certificate,
    check_comparison_convolution,
    check_comparison_discrete,
    convolution_problem_for,
    delayed_problem_for,
    march_convolution,
    march_delayed,
    proof_constants,
)

log = logging.getLogger("elapsedtime")

EXIT_OK, EXIT_FAILURE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class _Run:
    """Shared state between the tasks of one scenario."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.out = sc.output_dir
        self.artifacts = []
        self._steady = None
        self._equilibrium = None
        self.n0 = None
        self.history = None
        self.trace = None
        self.reference = None
        self.gap = None
        self.certificate = None

    def write(self, writer, name, obj):
        writer(self.out / name, obj)
        self.artifacts.append(name)

    # -- lazily computed shared quantities --------------------------------

    def steady(self, r_max_scan=None, n_scan=512):
        if self._steady is None or r_max_scan is not None:
            self._steady = solve_steady_state(self.sc.coefficient, self.sc.grid, r_max_scan, n_scan)
        return self._steady

    def equilibrium(self) -> Equilibrium:
        if self._equilibrium is None:
            roots = self.steady().roots
            if len(roots) != 1:
                raise NumericalError(f"expected a unique equilibrium, found {len(roots)}: {roots}")
            self._equilibrium = equilibrium_density(self.sc.coefficient, roots[0], self.sc.grid)
        return self._equilibrium

    def target(self) -> Equilibrium:
        """State the trace is compared with: scheme fixed point or quadrature equilibrium."""
        sc = self.sc
        eq = self.equilibrium()
        if sc.variant_kind == "linear_frozen":
            r_bar = eq.r_star if sc.r_bar is None else sc.r_bar
            rate, dens = stationary_density(sc.coefficient, r_bar, sc.grid)
            return Equilibrium(rate, r_bar, dens)
        if sc.reference == "scheme":
            return discrete_equilibrium(sc.coefficient, sc.grid, eq.r_star)
        return eq

    def initial(self):
        if self.n0 is None:
            sc = self.sc
            needs_eq = sc.density_spec["kind"] != "uniform" and sc.density_spec["kind"] != "tabulated"
            eq_cells = self.equilibrium().density.cells if needs_eq else None
            self.n0 = sc.initial_density(eq_cells)
        return self.n0

    def initial_history(self):
        r_star = self.equilibrium().r_star if self.sc.rate_spec["kind"] == "relative" else 0.0
        return self.sc.history(r_star)


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


def task_steady(run: _Run, opts: dict):
    report = run.steady(opts.get("r_max_scan"), int(opts.get("n_scan", 512)))
    payload = report.to_dict()
    payload["r_max_scan"] = opts.get("r_max_scan", 2.0 * run.sc.coefficient.sup_norm)
    run.write(write_json, "steady.json", payload)
    if len(report.roots) == 1:
        run.write(write_density_csv, "equilibrium_density.csv", run.equilibrium().density)


def task_simulate(run: _Run, opts: dict):
    sc = run.sc
    r_star = run.equilibrium().r_star
    config = SimulationConfig(sc.variant(r_star), sc.dt, sc.t_end, sc.grid, sc.record_every)
    run.reference = run.target()
    n0 = run.initial()
    trace = simulate(config, sc.coefficient, n0, run.initial_history(), run.reference)
    run.trace = trace
    run.write(write_trace_csv, "trace.csv", trace)
    run.write(write_density_csv, "final_density.csv", trace.final_density)
    summary = {
        "variant": trace.variant,
        "records": len(trace),
        "warnings": trace.warnings,
        "reference": sc.reference if sc.variant_kind != "linear_frozen" else "linear_stationary",
        "reference_rate": run.reference.r_star,
        "quadrature_rate": r_star,
        "max_mass_error": float(np.max(np.abs(trace.mass - 1.0))),
        "tv_initial": float(trace.tv[0]),
        "tv_final": float(trace.tv[-1]),
    }
    run.write(write_json, "simulate.json", summary)


def task_rate_fit(run: _Run, opts: dict):
    trace = run.trace
    kind = str(opts.get("kind", "exponential")).lower()
    series = opts.get("series", ["tv", "r", "x"])
    windows = opts.get("windows", {})
    envelope = opts.get("envelope", {})
    default = (run.sc.t_end / 10.0, run.sc.t_end)
    devs = trace_deviations(trace, run.reference)
    out = {}
    for name in series:
        if name not in devs:
            raise ConfigError(f"rate-fit series must be among {sorted(devs)}")
        try:
            out[name] = fit_decay(trace.times, devs[name], kind, windows.get(name, default),
                                  envelope=envelope.get(name)).to_dict()
        except InsufficientData as exc:
            out[name] = {"error": str(exc), "kind": kind, "window": list(windows.get(name, default))}
    run.write(write_json, "rate_fit.json", out)


def task_linear_gap(run: _Run, opts: dict):
    sc = run.sc
    r_bar = opts.get("r_bar")
    r_bar = run.equilibrium().r_star if r_bar is None else float(r_bar)
    t_end = float(opts.get("t_end", sc.t_end))
    window = opts.get("window")
    run.gap = measure_linear_gap(sc.coefficient, r_bar, sc.grid, sc.dt, t_end,
                                 probes=int(opts.get("probes", 5)), seed=sc.seed, window=window)
    run.write(write_json, "linear_gap.json", run.gap.to_dict())


def _certificate_kind(sc: Scenario, opts: dict) -> str:
    if "kind" in opts:
        return str(opts["kind"]).lower().replace("-", "_")
    if sc.variant_kind == "discrete_delay":
        return "discrete_delay"
    if sc.variant_kind == "distributed_delay" and sc.kernel.kind in ("exponential", "algebraic"):
        return "distributed_exp" if sc.kernel.kind == "exponential" else "algebraic"
    raise ConfigError("certificate task needs a delay variant or an explicit kind")


def task_certificate(run: _Run, opts: dict):
    sc = run.sc
    S = sc.coefficient
    if "C0" in opts and "lam" in opts:
        C0, lam = float(opts["C0"]), float(opts["lam"])
    elif run.gap is not None:
        C0 = float(opts.get("C0", run.gap.c0_hat))
        lam = float(opts.get("lam", run.gap.lambda_hat))
    else:
        raise ConfigError("certificate needs C0 and lam, or an earlier linear-gap task")
    eq = run.equilibrium()
    hist = run.initial_history()
    past = [hist.first_value, hist.last_value]
    if hist.table_start < 0:
        past.extend(hist.past(np.linspace(hist.table_start, -1e-12, 1001)).tolist())
    tv0 = tv_distance(run.initial(), eq.density)
    constants = proof_constants(C0, S.sup_norm, tv0, max(abs(v - eq.r_star) for v in past))
    constants.update(ell=S.lipschitz_ell, lam=lam)
    if "mu" in opts:
        constants["mu"] = float(opts["mu"])
    kind = _certificate_kind(sc, opts)
    if kind == "discrete_delay":
        if sc.delay is None:
            raise ConfigError("discrete_delay certificate needs model.delay")
        constants["d"] = sc.delay
        cert = build_exponential_certificate(kind, constants)
    elif kind == "distributed_exp":
        constants.update(c_alpha=sc.kernel.c_alpha, beta=sc.kernel.beta)
        cert = build_exponential_certificate(kind, constants)
    elif kind == "algebraic":
        constants.update(c_alpha=sc.kernel.c_alpha, beta=sc.kernel.beta)
        cert = build_algebraic_certificate(constants, sc.kernel)
    else:
        raise ConfigError(f"unknown certificate kind {kind!r}")
    run.certificate = cert
    run.write(write_json, "certificate.json", cert.to_dict())


def task_volterra_check(run: _Run, opts: dict):
    sc = run.sc
    cert = run.certificate
    report = {"kind": cert.kind, "admissible": cert.admissible}
    if not cert.admissible:
        report["skipped"] = "inadmissible certificate: no super-solution to check"
        run.write(write_json, "volterra_check.json", report)
        return
    T = float(opts.get("t_end", sc.t_end))
    dt = float(opts.get("dt", sc.dt))
    if cert.kind == "discrete_delay":
        problem = delayed_problem_for(cert, T, dt)
        u = march_delayed(problem)
        passes, margin = check_comparison_discrete(problem, cert.evaluate, "upper")
    else:
        kernel = sc.kernel
        problem = convolution_problem_for(cert, T, dt, alpha=kernel.evaluate, tail=kernel.tail)
        u = march_convolution(problem)
        passes, margin = check_comparison_convolution(problem, cert.evaluate, "upper")
    t = problem.times
    v = cert.evaluate(t)
    report.update(passes=passes, margin=margin, t_end=T, dt=dt,
                  dominates_marched=bool(np.all(v >= u)),
                  max_marched=float(np.max(u)))
    if run.trace is not None:
        dev = trace_deviations(run.trace, run.reference)["r" if cert.kind == "discrete_delay" else "x"]
        excess = dev - cert.evaluate(run.trace.times)
        report.update(trace_series="r" if cert.kind == "discrete_delay" else "x",
                      trace_within_bound=bool(np.all(excess <= 0)),
                      trace_max_excess=float(np.max(excess)))
    run.write(write_json, "volterra_check.json", report)


TASK_FUNCS = {
    "steady": task_steady,
    "simulate": task_simulate,
    "rate-fit": task_rate_fit,
    "linear-gap": task_linear_gap,
    "certificate": task_certificate,
    "volterra-check": task_volterra_check,
}


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _versions() -> dict:
    return {"elapsedtime": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def _fallback_output_dir(path: Path) -> Path:
    """Best guess at the output directory of a config that failed validation."""
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        out = Path(raw.get("output_dir", f"out/{raw.get('name', path.stem)}"))
    except Exception:
        out = Path("out") / path.stem
    return out if out.is_absolute() else path.parent / out


def _log_error(out: Path, exc: BaseException, status: int):
    out.mkdir(parents=True, exist_ok=True)
    with (out / "errors.log").open("a", encoding="utf-8") as fh:
        fh.write(f"exit {status}: {type(exc).__name__}: {exc}\n")
        if status == EXIT_FAILURE:
            fh.write("".join(traceback.format_exception(type(exc), exc, exc.__traceback__)))


def _status(exc: BaseException) -> int:
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    return EXIT_FAILURE


def run_scenario(path) -> int:
    path = Path(path)
    started = time.time()
    try:
        sc = validate_scenario(path)
    except Exception as exc:  # validation failures leave only errors.log
        status = _status(exc)
        out = _fallback_output_dir(path)
        if out.joinpath("errors.log").exists():
            out.joinpath("errors.log").unlink()
        _log_error(out, exc, status)
        log.error("%s: %s", path, exc)
        return status

    sc.output_dir.mkdir(parents=True, exist_ok=True)
    stale = sc.output_dir / "errors.log"
    if stale.exists():
        stale.unlink()
    run = _Run(sc)
    status, done = EXIT_OK, []
    try:
        for name, opts in sc.tasks:
            t0 = time.time()
            TASK_FUNCS[name](run, opts)
            done.append({"task": name, "seconds": round(time.time() - t0, 3)})
            log.info("%s: %s done in %.2fs", sc.name, name, time.time() - t0)
    except Exception as exc:
        status = _status(exc)
        _log_error(sc.output_dir, exc, status)
        log.error("%s: %s", sc.name, exc)
    finished = time.time()
    manifest = {
        "name": sc.name,
        "config": str(path),
        "config_sha256": sc.config_hash,
        "seed": sc.seed,
        "versions": _versions(),
        "wall_clock": {
            "started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
            "finished": _dt.datetime.fromtimestamp(finished, _dt.timezone.utc).isoformat(),
            "seconds": round(finished - started, 3),
        },
        "tasks": done,
        "artifacts": sorted(run.artifacts),
        "exit_status": status,
    }
    write_json(sc.output_dir / "manifest.json", manifest)
    return status


def _cmd_run(args) -> int:
    paths = args.configs
    if args.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(run_scenario, paths))
    else:
        codes = [run_scenario(p) for p in paths]
    for p, c in zip(paths, codes):
        print(f"{p}: exit {c}")
    return max(codes)


def _cmd_validate(args) -> int:
    try:
        sc = validate_scenario(args.config)
    except ElapsedTimeError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return _status(exc)
    print(f"ok: {sc.name} ({len(sc.tasks)} tasks, {sc.grid.n_cells} age cells, "
          f"{int(round(sc.t_end / sc.dt))} steps)")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="elapsedtime", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one or more scenario files")
    p_run.add_argument("configs", nargs="+", type=Path)
    p_run.add_argument("--jobs", type=int, default=1, help="scenarios to run in parallel")
    p_val = sub.add_parser("validate", help="check a scenario file without running it")
    p_val.add_argument("config", type=Path)
    sub.add_parser("version", help="print version information")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    print(f"elapsedtime {__version__} (python {platform.python_version()}, numpy {np.__version__}, "
          f"scipy {scipy.__version__})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
