"""Max-min fair coordinated beamforming on top of the conic pipeline.

Channels and beamformers are stored stacked, one row per user:
``h[k] = [h_k1; ...; h_kL]`` and ``v[k] = [v_1k; ...; v_Lk]``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .conic import (
    ConicProblem,
    InvalidConfigError,
    StuffingTemplate,
    build_template,
    compute_dims,
    qos_coefficients,
    stuff,
)
from .hsd import IterateState, SolveResult, SolverSettings, Status, solve

log = logging.getLogger(__name__)

FEAS_TOL = 1e-3


class SolverInconclusive(RuntimeError):
    """The conic solver stopped without an optimality or infeasibility verdict."""

    def __init__(self, message: str, result: SolveResult | None = None):
        super().__init__(message)
        self.result = result


class DegenerateChannelError(ValueError):
    """The stacked channel matrix does not have full row rank."""


@dataclass
class NetworkConfig:
    L: int
    K: int
    antennas: tuple[int, ...]
    power_budgets: np.ndarray  # watts, per AP
    noise_powers: np.ndarray  # watts, per user
    weights: np.ndarray | None = None
    field_mode: str = "complex"

    def __post_init__(self):
        if np.isscalar(self.antennas):
            self.antennas = (int(self.antennas),) * int(self.L)
        self.antennas = tuple(int(a) for a in self.antennas)
        self.power_budgets = np.broadcast_to(np.asarray(self.power_budgets, dtype=float), (self.L,)).copy()
        self.noise_powers = np.broadcast_to(np.asarray(self.noise_powers, dtype=float), (self.K,)).copy()
        if self.weights is None:
            self.weights = np.ones(self.K)
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=float), (self.K,)).copy()
        # validates L, K, antenna counts and field mode
        compute_dims(self.L, self.K, self.antennas, self.field_mode)
        if np.any(self.power_budgets <= 0) or np.any(self.noise_powers <= 0):
            raise InvalidConfigError("power budgets and noise powers must be > 0")
        if np.any(self.weights <= 0):
            raise InvalidConfigError("weights must be > 0")

    @property
    def N(self) -> int:
        return sum(self.antennas)

    @property
    def antenna_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.antennas)]).astype(int)

    def dims(self):
        return compute_dims(self.L, self.K, self.antennas, self.field_mode)


@dataclass
class ChannelRealization:
    h: np.ndarray  # (K, N)

    def block(self, config: NetworkConfig, k: int, l: int) -> np.ndarray:
        off = config.antenna_offsets
        return self.h[k, off[l]:off[l + 1]]

    def block_norms(self, config: NetworkConfig) -> np.ndarray:
        """``||h_kl||`` as a (K, L) array."""
        off = config.antenna_offsets
        sq = np.abs(self.h) ** 2
        return np.sqrt(np.add.reduceat(sq, off[:-1], axis=1))


@dataclass
class BeamformerSet:
    v: np.ndarray  # (K, N)

    def block(self, config: NetworkConfig, l: int, k: int) -> np.ndarray:
        off = config.antenna_offsets
        return self.v[k, off[l]:off[l + 1]]

    def ap_powers(self, config: NetworkConfig) -> np.ndarray:
        """Transmit power of every AP, ``sum_k ||v_lk||^2``."""
        off = config.antenna_offsets
        sq = (np.abs(self.v) ** 2).sum(axis=0)
        return np.add.reduceat(sq, off[:-1])

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.v) ** 2))


@dataclass(frozen=True)
class QosTarget:
    gamma: float
    theta: np.ndarray
    beta: np.ndarray

    @classmethod
    def from_rate(cls, gamma: float, weights) -> "QosTarget":
        theta, beta = qos_coefficients(gamma, weights)
        return cls(float(gamma), theta, beta)


def _as_h(h) -> np.ndarray:
    return h.h if isinstance(h, ChannelRealization) else np.asarray(h)


def _as_v(v) -> np.ndarray:
    return v.v if isinstance(v, BeamformerSet) else np.asarray(v)


def gains(v, h) -> np.ndarray:
    """``G[k, i] = h_k^H v_i``."""
    return np.conj(_as_h(h)) @ _as_v(v).T


def sinr_all(v, h, config: NetworkConfig) -> np.ndarray:
    p = np.abs(gains(v, h)) ** 2
    signal = np.diag(p).copy()
    interference = p.sum(axis=1) - signal
    return signal / (interference + config.noise_powers)


def sinr(v, h, k: int, config: NetworkConfig) -> float:
    hk = np.conj(_as_h(h)[k])
    p = np.abs(_as_v(v) @ hk) ** 2
    return float(p[k] / (p.sum() - p[k] + config.noise_powers[k]))


def weighted_rates(v, h, config: NetworkConfig) -> np.ndarray:
    return config.weights * np.log2(1.0 + sinr_all(v, h, config))


def min_weighted_rate(v, h, config: NetworkConfig) -> float:
    return float(np.min(weighted_rates(v, h, config)))


def power_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts * 1000.0) if watts > 0 else -math.inf


def gamma_max_default(h, config: NetworkConfig) -> float:
    """Interference-free, full-power, phase-aligned rate bound.

    ``min_k w_k log2(1 + (sum_l sqrt(P_l) ||h_kl||)^2 / sigma_k^2)``.
    """
    norms = ChannelRealization(_as_h(h)).block_norms(config)
    amp = norms @ np.sqrt(config.power_budgets)
    return float(np.min(config.weights * np.log2(1.0 + amp ** 2 / config.noise_powers)))


@dataclass
class Validation:
    sinr: np.ndarray
    theta: np.ndarray
    ap_powers: np.ndarray
    budgets: np.ndarray
    tol: float = FEAS_TOL

    @property
    def sinr_ok(self) -> bool:
        return bool(np.all(self.sinr >= self.theta * (1.0 - self.tol)))

    @property
    def power_ok(self) -> bool:
        return bool(np.all(self.ap_powers <= self.budgets * (1.0 + self.tol)))

    @property
    def ok(self) -> bool:
        return self.sinr_ok and self.power_ok


def validate_solution(v, h, config: NetworkConfig, gamma: float, tol: float = FEAS_TOL) -> Validation:
    """Substitute beamformers back into the SINR and per-AP power constraints."""
    target = QosTarget.from_rate(gamma, config.weights)
    v = v if isinstance(v, BeamformerSet) else BeamformerSet(np.asarray(v))
    return Validation(sinr_all(v, h, config), target.theta, v.ap_powers(config), config.power_budgets, tol)


@dataclass
class Workspace:
    """Template plus the one problem instance it stuffs; owned by one bisection."""

    template: StuffingTemplate
    problem: ConicProblem

    @classmethod
    def for_config(cls, config: NetworkConfig) -> "Workspace":
        return cls(*build_template(config.dims()))


@dataclass
class FeasibilityResult:
    feasible: bool
    gamma: float
    beamformers: BeamformerSet | None = None
    objective_dbm: float = math.nan
    solve: SolveResult | None = None
    validation: Validation | None = None
    stuff_time: float = 0.0
    solve_time: float = 0.0


def extract_beamformers(nu: np.ndarray, config: NetworkConfig, dims=None) -> BeamformerSet:
    """Read the stacked beamformers back out of the trailing block of ``nu``."""
    d = dims or config.dims()
    blocks = np.asarray(nu)[d.v_offset:d.v_offset + d.M].reshape(d.K, d.user_width)
    if d.field_mode == "complex":
        return BeamformerSet(blocks[:, :d.N] + 1j * blocks[:, d.N:])
    return BeamformerSet(blocks.copy())


def feasibility_solve(
    gamma: float,
    h,
    config: NetworkConfig,
    workspace: Workspace | None = None,
    settings: SolverSettings | None = None,
    rescale: bool = True,
    refinements: int = 2,
) -> FeasibilityResult:
    """Minimum-power beamformers meeting rate ``gamma`` for every user, if any exist.

    With ``rescale`` the problem is solved in noise-normalized units
    (``h_k sqrt(Pbar) / sigma_k``, unit noise, budgets ``P_l / Pbar``), which
    leaves the feasible set unchanged up to the scaling ``v = sqrt(Pbar) v'``.
    A solution that fails validation is re-solved with a tenfold tighter
    tolerance up to ``refinements`` times, warm-started from the previous run.
    """
    settings = settings or SolverSettings()
    h = _as_h(h)
    workspace = workspace or Workspace.for_config(config)
    dims = workspace.template.dims
    sigma = np.sqrt(config.noise_powers)
    if rescale:
        pbar = float(np.mean(config.power_budgets))
        h_s = h * (np.sqrt(pbar) / sigma)[:, None]
        powers, sig, vscale = config.power_budgets / pbar, np.ones(config.K), math.sqrt(pbar)
    else:
        h_s, powers, sig, vscale = h, config.power_budgets, sigma, 1.0
    t0 = time.perf_counter()
    stuff(workspace.template, workspace.problem, h_s, powers, sig, config.weights, gamma)
    t1 = time.perf_counter()
    timing = {"stuff_time": t1 - t0}

    eps = settings.eps
    warm = None
    for attempt in range(refinements + 1):
        s = settings if attempt == 0 else _with_eps(settings, eps)
        start = None if warm is None else IterateState(warm.x, warm.y, 0)
        res = solve(workspace.problem, s, start)
        warm = res.state
        timing["solve_time"] = time.perf_counter() - t1
        if res.status is Status.PRIMAL_INFEASIBLE:
            return FeasibilityResult(False, gamma, solve=res, **timing)
        if res.status is not Status.OPTIMAL:
            raise SolverInconclusive(f"solver returned {res.status.value} at gamma={gamma:.6g}", res)
        bf = extract_beamformers(res.primal, config, dims)
        bf.v *= vscale
        val = validate_solution(bf, h, config, gamma)
        if val.ok:
            return FeasibilityResult(True, gamma, bf, power_dbm(bf.total_power), res, val, **timing)
        eps *= 0.1
        log.debug("validation failed at gamma=%.6g, retrying with eps=%.1e", gamma, eps)
    raise SolverInconclusive(f"solution failed validation at gamma={gamma:.6g}", res)


def _with_eps(settings: SolverSettings, eps: float) -> SolverSettings:
    return SolverSettings(**{**settings.__dict__, "eps": eps})


@dataclass
class BisectionResult:
    gamma: float
    beamformers: BeamformerSet | None
    gamma_max: float
    steps: int
    gamma_up: float
    gamma_max_feasible: bool = False
    inconclusive: int = 0
    iterations: int = 0
    stuff_time: float = 0.0
    solve_time: float = 0.0
    trace: list[tuple[float, str]] = field(default_factory=list)


def max_min_bisection(
    h,
    config: NetworkConfig,
    settings: SolverSettings | None = None,
    eps_rate: float = 0.01,
    gamma_max: float | None = None,
    gamma_low: float = 0.0,
    low_beamformers: BeamformerSet | None = None,
    workspace: Workspace | None = None,
) -> BisectionResult:
    """Bisection on the common rate target.

    ``gamma_low`` may be seeded with any rate known to be achievable (with
    ``low_beamformers`` achieving it); by default the bracket is
    ``[0, gamma_max]``.  A solver run that ends without a verdict counts as
    infeasible and is tallied in ``inconclusive``.
    """
    if not eps_rate > 0:
        raise ValueError(f"eps_rate must be > 0, got {eps_rate}")
    h = _as_h(h)
    settings = settings or SolverSettings()
    workspace = workspace or Workspace.for_config(config)
    g_max = gamma_max_default(h, config) if gamma_max is None else float(gamma_max)
    lo, up = float(gamma_low), g_max
    best = low_beamformers
    out = BisectionResult(lo, best, g_max, 0, up)
    if g_max <= 0 or lo >= up:
        return out

    def probe(gamma):
        t0 = time.perf_counter()
        try:
            r = feasibility_solve(gamma, h, config, workspace, settings)
        except SolverInconclusive as exc:
            out.inconclusive += 1
            out.solve_time += time.perf_counter() - t0
            if exc.result is not None:
                out.iterations += exc.result.iterations
            out.trace.append((gamma, "inconclusive"))
            log.info("bisection: no verdict at gamma=%.6g, treated as infeasible", gamma)
            return None
        out.iterations += r.solve.iterations
        out.stuff_time += r.stuff_time
        out.solve_time += time.perf_counter() - t0 - r.stuff_time
        out.trace.append((gamma, "feasible" if r.feasible else "infeasible"))
        return r

    while True:
        gamma = 0.5 * (lo + up)
        r = probe(gamma)
        out.steps += 1
        if r is not None and r.feasible:
            lo, best = gamma, r.beamformers
        else:
            up = gamma
        if up - lo < eps_rate:
            break
    if up == g_max:
        # every probe was feasible; the bound itself may be attained
        r = probe(g_max)
        if r is not None and r.feasible:
            lo, best = g_max, r.beamformers
            out.gamma_max_feasible = True
    out.gamma, out.beamformers, out.gamma_up = lo, best, up
    return out


@dataclass
class ZFResult:
    applicable: bool
    min_rate: float = math.nan
    beamformers: BeamformerSet | None = None


def zf_baseline(h, config: NetworkConfig, rank_tol: float = 1e-10) -> ZFResult:
    """Zero-forcing beamformers with a common per-user amplitude.

    Directions are the normalized columns of the pseudo-inverse of the stacked
    channel matrix; the amplitude is the largest one meeting every per-AP
    budget.  Returns ``applicable=False`` when there are fewer antennas than
    users.
    """
    h = _as_h(h)
    K, N = h.shape
    if N < K:
        return ZFResult(False)
    H = np.conj(h)  # rows h_k^H
    s = np.linalg.svd(H, compute_uv=False)
    if s[-1] <= rank_tol * max(s[0], np.finfo(float).tiny):
        raise DegenerateChannelError(f"channel matrix is rank deficient (smallest singular value {s[-1]:.3e})")
    W = np.linalg.pinv(H)  # (N, K)
    W = W / np.linalg.norm(W, axis=0, keepdims=True)
    directions = BeamformerSet(W.T.copy())
    per_ap = directions.ap_powers(config)
    with np.errstate(divide="ignore"):
        amp = float(np.min(np.sqrt(config.power_budgets / per_ap)))
    bf = BeamformerSet(amp * directions.v)
    return ZFResult(True, min_weighted_rate(bf, h, config), bf)
