"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time

import numpy as np

from . import experiments as ex
from .beamforming import (
    DegenerateChannelError,
    NetworkConfig,
    SolverInconclusive,
    feasibility_solve,
    max_min_bisection,
    power_dbm,
    zf_baseline,
)
from .cones import project_soc
from .conic import InvalidConfigError, InvalidTargetError, build_from_scratch, build_template, problems_equal, stuff
from .hsd import NumericalError, SolverSettings
from .scenario import ScenarioError, generate_channels, load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("admmbeam")


class ConfigError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--scenario", help="scenario file (key = value lines)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.add_argument("--eps", type=float, help="solver tolerance")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--deterministic", action="store_true", help="omit the timestamp header line")
    p.add_argument("--threads", type=int, default=1, help="worker processes for Monte-Carlo trials")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="admmbeam", description="Coordinated beamforming by conic ADMM.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("maxmin", parents=[common], help="max-min rate of one channel draw")
    p.add_argument("--trial", type=int, default=0, help="trial index of the channel draw")
    sub.add_parser("sweep-snr", parents=[common], help="mean min-rate versus transmit SNR")
    sub.add_parser("sweep-density", parents=[common], help="mean min-rate versus user density")
    sub.add_parser("bench-stuff", parents=[common], help="in-place refresh versus rebuild timings")
    sub.add_parser("bench-solve", parents=[common], help="solve time versus problem size")
    sub.add_parser("selftest", parents=[common], help="quick end-to-end checks")
    return parser


def _scenario(args):
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    if args.eps is not None and not args.eps > 0:
        raise ConfigError("--eps must be > 0")
    try:
        return load_scenario(args.scenario, seed=args.seed, trials=args.trials, eps=args.eps)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from exc


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _emit(args, sc, columns, rows, extra=()):
    with _output(args.out) as fh:
        ex.write_csv(fh, columns, rows, [*sc.header_items(), *extra], args.deterministic)


def _check_records(records) -> int:
    failed = [r for r in records if not r.ok]
    for r in failed:
        log.warning("trial %d (point %g) failed: %s", r.trial, r.point, r.error)
    if records and len(failed) == len(records):
        log.error("every trial failed")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_maxmin(args, sc) -> int:
    h = generate_channels(sc, args.trial)
    power = 10.0 ** ((sc.power_dbm - 30.0) / 10.0) if sc.power_dbm is not None else sc.power_for_snr(sc.snr_db[0])
    config = sc.network(power)
    zf = zf_baseline(h, config)
    low, low_bf = (zf.min_rate, zf.beamformers) if zf.applicable else (0.0, None)
    t0 = time.perf_counter()
    r = max_min_bisection(h, config, sc.solver_settings(), sc.eps_rate, gamma_low=low, low_beamformers=low_bf)
    elapsed = time.perf_counter() - t0
    rows = [dict(
        gamma_opt=r.gamma,
        power_dbm=power_dbm(r.beamformers.total_power) if r.beamformers is not None else float("nan"),
        zf_rate=zf.min_rate, gamma_max=r.gamma_max, steps=r.steps, iterations=r.iterations,
        inconclusive=r.inconclusive, seconds=elapsed,
    )]
    _emit(args, sc, list(rows[0]), rows, [("trial", str(args.trial))])
    return EXIT_OK


def cmd_sweep_snr(args, sc) -> int:
    rows, records = ex.run_rate_vs_snr(sc, args.threads)
    _emit(args, sc, ex.SNR_COLUMNS, rows)
    return _check_records(records)


def cmd_sweep_density(args, sc) -> int:
    rows, records = ex.run_rate_vs_density(sc, args.threads)
    _emit(args, sc, ex.DENSITY_COLUMNS, rows)
    return _check_records(records)


def cmd_bench_stuff(args, sc) -> int:
    rows = ex.bench_stuffing(sc)
    _emit(args, sc, ex.STUFF_COLUMNS, rows)
    return EXIT_OK if all(r["equal"] for r in rows) else EXIT_NUMERICAL


def cmd_bench_solve(args, sc) -> int:
    rows = ex.bench_solver(sc)
    slope = ex.loglog_slope([r["m"] for r in rows], [r["per_iter_s"] for r in rows])
    _emit(args, sc, ex.SOLVE_COLUMNS, rows, [("per_iter_slope_vs_m", ex.format_number(slope))])
    return EXIT_OK


def cmd_selftest(args, sc) -> int:
    checks = []
    unit = NetworkConfig(1, 1, (1,), 4.0, 1.0, None, "real")
    r = feasibility_solve(1.0, np.array([[2.0]]), unit, settings=SolverSettings(eps=1e-4))
    checks.append(("unit instance norm 0.5", r.feasible and abs(np.linalg.norm(r.beamformers.v) - 0.5) < 1e-3))
    r = feasibility_solve(np.log2(18.0), np.array([[2.0]]), unit)
    checks.append(("infeasible target detected", not r.feasible))
    w = np.array([1.0, 3.0, 4.0])
    checks.append(("soc projection", np.allclose(project_soc(w), [3.0, 1.8, 2.4])))
    h = generate_channels(sc.replace(L=3, K=2), 0, L=3, K=2)
    cfg = sc.network(sc.power_for_snr(0.0), L=3, K=2)
    template, problem = build_template(cfg.dims())
    args_ = (h.h, cfg.power_budgets, np.sqrt(cfg.noise_powers), cfg.weights, 0.5)
    stuff(template, problem, *args_)
    checks.append(("stuff matches rebuild", problems_equal(problem, build_from_scratch(cfg.dims(), *args_))))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_NUMERICAL


COMMANDS = {
    "maxmin": cmd_maxmin,
    "sweep-snr": cmd_sweep_snr,
    "sweep-density": cmd_sweep_density,
    "bench-stuff": cmd_bench_stuff,
    "bench-solve": cmd_bench_solve,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; those are configuration errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        sc = _scenario(args)
        return COMMANDS[args.command](args, sc)
    except (ConfigError, ScenarioError, InvalidConfigError, InvalidTargetError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SolverInconclusive, DegenerateChannelError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
