"""Monte-Carlo sweeps and timing benchmarks.

Every trial draws its channels from ``(seed, trial_index)`` alone and owns its
template, problem and solver state, so results do not depend on how trials
are spread over worker processes.  Records are sorted by ``(point, trial)``
before aggregation.
"""

from __future__ import annotations

import csv
import datetime
import io
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .beamforming import (
    DegenerateChannelError,
    SolverInconclusive,
    max_min_bisection,
    min_weighted_rate,
    zf_baseline,
)
from .conic import build_from_scratch, build_template, problems_equal, stuff
from .hsd import NumericalError, solve
from .scenario import Scenario, generate_channels

log = logging.getLogger(__name__)

SNR_COLUMNS = ("snr_db", "mean_opt_rate", "mean_zf_rate", "std_opt", "std_zf", "trials")
DENSITY_COLUMNS = (
    "density_per_km2", "L", "K", "mean_opt_rate", "mean_zf_rate", "gap", "sem_gap", "trials", "zf_excluded",
)
STUFF_COLUMNS = ("L", "K", "n", "m", "nnz", "stuff_median_s", "rebuild_median_s", "speedup", "equal")
SOLVE_COLUMNS = (
    "L", "K", "n", "m", "nnz", "status", "iterations", "solve_median_s", "per_iter_s", "primal", "dual", "gap",
)


@dataclass
class TrialRecord:
    trial: int
    point: float
    L: int
    K: int
    gamma_opt: float = math.nan
    achieved_rate: float = math.nan  # min-rate delivered by the returned beamformers
    zf_rate: float = math.nan
    zf_applicable: bool = True
    iterations: int = 0
    steps: int = 0
    stuff_time: float = 0.0
    solve_time: float = 0.0
    inconclusive: int = 0
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def run_trial(scenario: Scenario, trial_index: int, point: float, snr_db: float, L: int, K: int) -> TrialRecord:
    """Optimal and zero-forcing min-rate of one channel draw.

    The bisection starts from the zero-forcing rate when that baseline
    applies, so the reported optimum never falls below it.
    """
    rec = TrialRecord(trial_index, point, L, K)
    try:
        h = generate_channels(scenario, trial_index, L=L, K=K)
        config = scenario.network(scenario.power_for_snr(snr_db), L=L, K=K)
        zf = zf_baseline(h, config)
        rec.zf_applicable = zf.applicable
        low, low_bf = (zf.min_rate, zf.beamformers) if zf.applicable else (0.0, None)
        rec.zf_rate = zf.min_rate
        r = max_min_bisection(
            h, config, scenario.solver_settings(), scenario.eps_rate, gamma_low=low, low_beamformers=low_bf,
        )
    except (NumericalError, DegenerateChannelError, SolverInconclusive) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("trial %d at %g failed: %s", trial_index, point, rec.error)
        return rec
    rec.gamma_opt = r.gamma
    if r.beamformers is not None:
        rec.achieved_rate = min_weighted_rate(r.beamformers, h, config)
    rec.iterations = r.iterations
    rec.steps = r.steps
    rec.stuff_time = r.stuff_time
    rec.solve_time = r.solve_time
    rec.inconclusive = r.inconclusive
    return rec


def _run_trial_args(args):
    return run_trial(*args)


def run_trials(tasks: Sequence[tuple], threads: int = 1) -> list[TrialRecord]:
    """Run ``run_trial(*task)`` for every task, optionally in a process pool."""
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_trial_args, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        records = [run_trial(*t) for t in tasks]
    return sorted(records, key=lambda r: (r.point, r.trial))


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else math.nan


def _std(xs) -> float:
    # sample standard deviation; zero for a single trial
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else (0.0 if len(xs) else math.nan)


def summarize_snr(records: Iterable[TrialRecord], snr_points: Sequence[float]) -> list[dict]:
    rows = []
    for snr in snr_points:
        recs = [r for r in records if r.point == snr and r.ok and r.zf_applicable]
        if not recs:
            continue
        opt = [r.gamma_opt for r in recs]
        zf = [r.zf_rate for r in recs]
        rows.append(dict(
            snr_db=snr, mean_opt_rate=_mean(opt), mean_zf_rate=_mean(zf),
            std_opt=_std(opt), std_zf=_std(zf), trials=len(recs),
        ))
    return rows


def run_rate_vs_snr(scenario: Scenario, threads: int = 1) -> tuple[list[dict], list[TrialRecord]]:
    """Mean optimal and ZF min-rates per transmit SNR point."""
    tasks = [
        (scenario, t, float(snr), float(snr), scenario.L, scenario.K)
        for snr in scenario.snr_db for t in range(scenario.trials)
    ]
    records = run_trials(tasks, threads)
    return summarize_snr(records, [float(s) for s in scenario.snr_db]), records


def density_points(scenario: Scenario) -> list[tuple[float, int, int]]:
    """``(users per km^2, L, K)`` for every AP count of the density sweep."""
    area_km2 = (2.0 * scenario.half_width_m / 1000.0) ** 2
    out = []
    for L in scenario.density_L:
        K = max(1, int(round(scenario.density_ratio * L)))
        out.append((K / area_km2, int(L), K))
    return out


def density_scenario(scenario: Scenario) -> Scenario:
    return scenario.replace(antennas=(scenario.density_antennas,))


def summarize_density(records: Iterable[TrialRecord], points) -> list[dict]:
    rows = []
    for density, L, K in points:
        recs = [r for r in records if r.point == density and r.ok]
        excluded = sum(1 for r in recs if not r.zf_applicable)
        recs = [r for r in recs if r.zf_applicable]
        if not recs and not excluded:
            continue
        gaps = [r.gamma_opt - r.zf_rate for r in recs]
        sem = _std(gaps) / math.sqrt(len(gaps)) if gaps else math.nan
        rows.append(dict(
            density_per_km2=density, L=L, K=K,
            mean_opt_rate=_mean([r.gamma_opt for r in recs]), mean_zf_rate=_mean([r.zf_rate for r in recs]),
            gap=_mean(gaps), sem_gap=sem, trials=len(recs), zf_excluded=excluded,
        ))
    return rows


def run_rate_vs_density(scenario: Scenario, threads: int = 1) -> tuple[list[dict], list[TrialRecord]]:
    """Mean optimal and ZF min-rates per user density, with ``K / L`` fixed.

    Instances where zero-forcing does not apply (fewer antennas than users)
    are left out of the means and counted in ``zf_excluded``.
    """
    sc = density_scenario(scenario)
    points = density_points(sc)
    tasks = [(sc, t, d, sc.density_snr_db, L, K) for d, L, K in points for t in range(sc.trials)]
    records = run_trials(tasks, threads)
    return summarize_density(records, points), records


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _bench_instance(scenario: Scenario, L: int, trial: int = 0):
    K = max(1, int(round(scenario.bench_ratio * L)))
    sc = scenario.replace(antennas=(scenario.bench_antennas,))
    h = generate_channels(sc, trial, L=L, K=K)
    config = sc.network(sc.power_for_snr(sc.density_snr_db), L=L, K=K)
    return h, config


def bench_stuffing(scenario: Scenario, sizes: Sequence[int] | None = None, gamma: float = 1.0) -> list[dict]:
    """Median time of an in-place refresh against a rebuild from scratch.

    Each size first checks that both paths produce the same problem.
    """
    rows = []
    for L in sizes or scenario.bench_L:
        h, config = _bench_instance(scenario, L)
        dims = config.dims()
        sigma = np.sqrt(config.noise_powers)
        args = (h.h, config.power_budgets, sigma, config.weights, gamma)
        template, problem = build_template(dims)
        stuff(template, problem, *args)
        equal = problems_equal(problem, build_from_scratch(dims, *args))
        t_stuff = _median_time(lambda: stuff(template, problem, *args), scenario.bench_repeats)
        t_build = _median_time(lambda: build_from_scratch(dims, *args), scenario.bench_repeats)
        rows.append(dict(
            L=L, K=dims.K, n=dims.n, m=dims.m, nnz=problem.A.nnz,
            stuff_median_s=t_stuff, rebuild_median_s=t_build, speedup=t_build / t_stuff, equal=int(equal),
        ))
    return rows


def bench_solver(scenario: Scenario, sizes: Sequence[int] | None = None) -> list[dict]:
    """Median solve time and per-iteration cost over problem sizes.

    The target rate is half the zero-forcing rate (or a small fixed rate when
    zero-forcing does not apply).  Every repeat refactors the system matrix.
    """
    settings = scenario.solver_settings()
    rows = []
    for L in sizes or scenario.bench_L:
        h, config = _bench_instance(scenario, L)
        zf = zf_baseline(h, config)
        gamma = 0.5 * zf.min_rate if zf.applicable and zf.min_rate > 0 else 0.05
        template, problem = build_template(config.dims())
        stuff(template, problem, h.h, config.power_budgets, np.sqrt(config.noise_powers), config.weights, gamma)
        results = []

        def once():
            problem.touch()
            results.append(solve(problem, settings))

        t = _median_time(once, scenario.bench_repeats)
        res = results[-1]
        r = res.residuals
        rows.append(dict(
            L=L, K=config.K, n=problem.n, m=problem.m, nnz=problem.A.nnz, status=res.status.value,
            iterations=res.iterations, solve_median_s=t, per_iter_s=t / max(res.iterations, 1),
            primal=r.primal, dual=r.dual, gap=r.gap,
        ))
    return rows


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    keep = np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(x[keep], y[keep], 1)[0])


def format_number(v) -> str:
    """Decimal rendering with 9 significant digits; integers and text as-is."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(
    out: TextIO,
    columns: Sequence[str],
    rows: Iterable[dict],
    header: Sequence[tuple[str, str]] = (),
    deterministic: bool = False,
):
    """Comment lines (``# key = value``), one header row, then the data rows.

    Without ``deterministic`` a ``# generated = <UTC timestamp>`` line comes
    first; it is the only line that may differ between identical runs.
    """
    if not deterministic:
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        out.write(f"# generated = {stamp}\n")
    for key, value in header:
        out.write(f"# {key} = {value}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_number(row[c]) for c in columns])


def csv_text(columns, rows, header=(), deterministic=True) -> str:
    buf = io.StringIO()
    write_csv(buf, columns, rows, header, deterministic)
    return buf.getvalue()


def read_csv_rows(text: str) -> list[dict]:
    """Parse output of :func:`write_csv`, skipping comment lines."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def record_dicts(records: Iterable[TrialRecord]) -> list[dict]:
    return [asdict(r) for r in records]
