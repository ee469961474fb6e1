"""Operator-splitting solver on the homogeneous self-dual embedding.

The primal-dual pair

    minimize c'nu  s.t.  A nu + mu = b, mu in V
    minimize -b'eta s.t. -A'eta + lambda = c, (lambda, eta) in {0} x V*

is folded into the single system ``y = Q x`` with ``x = (nu, eta, tau)`` in
``C = R^n x V* x R_+`` and ``y = (lambda, mu, kappa)`` in
``C* = {0}^n x V x R_+``.  Each iteration solves one linear system with
``I + Q``, projects onto ``C`` and updates ``y``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeProduct, dual_cone, free, in_product, nonneg
from .conic import ConicProblem

log = logging.getLogger(__name__)

INFEASIBLE_TAU_RATIO = 1e-6


class NumericalError(RuntimeError):
    """The linear system could not be factored or solved."""


class InvariantViolation(AssertionError):
    """An iterate left its cone or lost complementarity (debug mode only)."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    MAX_ITER = "max_iter_reached"


@dataclass
class SolverSettings:
    max_iter: int = 10000
    eps: float = 1e-3
    alpha: float = 1.0
    linsolve: str = "direct"
    iterative_tol: float = 1e-9
    normalize: bool = False
    # residuals are evaluated every `check_interval` iterations
    check_interval: int = 5
    # "compiled" runs the fused loop in _kernels; "numpy" is the reference path
    engine: str = "compiled"
    debug: bool = False
    trace: Callable[[str], None] | TextIO | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not 1.0 <= self.alpha < 2.0:
            raise ValueError(f"alpha must lie in [1, 2), got {self.alpha}")
        if self.linsolve not in ("direct", "iterative"):
            raise ValueError(f"linsolve must be 'direct' or 'iterative', got {self.linsolve!r}")
        if self.engine not in ("compiled", "numpy"):
            raise ValueError(f"engine must be 'compiled' or 'numpy', got {self.engine!r}")
        if self.max_iter < 1 or self.check_interval < 1:
            raise ValueError("max_iter and check_interval must be >= 1")


@dataclass
class IterateState:
    x: np.ndarray  # (nu, eta, tau)
    y: np.ndarray  # (lambda, mu, kappa)
    iteration: int = 0

    @classmethod
    def initial(cls, n: int, m: int) -> "IterateState":
        x = np.zeros(n + m + 1)
        y = np.zeros(n + m + 1)
        x[-1] = 1.0
        y[-1] = 1.0
        return cls(x, y, 0)

    @property
    def tau(self) -> float:
        return float(self.x[-1])

    @property
    def kappa(self) -> float:
        return float(self.y[-1])


@dataclass
class Residuals:
    primal: float = np.inf
    dual: float = np.inf
    gap: float = np.inf

    def within(self, eps: float) -> bool:
        return self.primal <= eps and self.dual <= eps and self.gap <= eps


@dataclass
class SolveResult:
    status: Status
    primal: np.ndarray | None = None
    dual: np.ndarray | None = None
    slack: np.ndarray | None = None
    certificate: np.ndarray | None = None
    residuals: Residuals = field(default_factory=Residuals)
    iterations: int = 0
    tau: float = np.nan
    kappa: float = np.nan
    state: IterateState | None = None  # final iterate, in the solver's working coordinates

    @property
    def objective(self) -> float:
        if self.primal is None:
            return np.nan
        return float(self.primal[0])


def embedding_cones(problem: ConicProblem) -> tuple[ConeProduct, ConeProduct]:
    """The cone ``C`` for x and its dual ``C*`` for y."""
    C = ConeProduct([free(problem.n)]) + dual_cone(problem.cone) + ConeProduct([nonneg(1)])
    return C, dual_cone(C)


def apply_Q(problem: ConicProblem, u) -> np.ndarray:
    """``Q u`` from the blocks of ``(A, b, c)`` without forming ``Q``."""
    u = np.asarray(u, dtype=float)
    n, m = problem.n, problem.m
    if u.shape != (n + m + 1,):
        raise ValueError(f"expected length {n + m + 1}, got {u.shape}")
    A, b, c = problem.A, problem.b, problem.c
    nu, eta, tau = u[:n], u[n:n + m], u[-1]
    return np.concatenate([
        A.T @ eta + c * tau,
        -(A @ nu) + b * tau,
        [-(c @ nu) - (b @ eta)],
    ])


def dense_Q(problem: ConicProblem) -> np.ndarray:
    A = problem.A.toarray()
    n, m = problem.n, problem.m
    Q = np.zeros((n + m + 1, n + m + 1))
    Q[:n, n:n + m] = A.T
    Q[:n, -1] = problem.c
    Q[n:n + m, :n] = -A
    Q[n:n + m, -1] = problem.b
    Q[-1, :n] = -problem.c
    Q[-1, n:n + m] = -problem.b
    return Q


class LinearSystem:
    """Solves ``(I + Q) z = w`` for one problem.

    The ``(nu, eta)`` block ``[[I, A'], [-A, I]]`` is reduced to
    ``(I + A'A) nu = r1 - A'r2`` and the ``tau`` row is eliminated with a
    rank-one correction.  In direct mode ``I + A'A`` is factored once per
    data version; iterative mode runs matrix-free conjugate gradients.
    """

    def __init__(self, problem: ConicProblem, method: str = "direct", tol: float = 1e-9):
        self.problem = problem
        self.method = method
        self.tol = tol
        self.version: int | None = None
        self.n_factorizations = 0
        self.refresh()

    def refresh(self):
        p = self.problem
        if self.version == p.version:
            return
        self.n, self.m = p.n, p.m
        self.A = p.A.tocsr()
        self.AT = p.A.T.tocsr()
        self.b = p.b.copy()
        self.c = p.c.copy()
        if self.method == "direct":
            K = (sp.identity(self.n, format="csc") + (self.AT @ self.A)).tocsc()
            try:
                self._lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise NumericalError(f"factorization of I + A'A failed: {exc}") from exc
            self.n_factorizations += 1
        else:
            n = self.n
            A, AT = self.A, self.AT
            self._op = spla.LinearOperator((n, n), matvec=lambda x: x + AT @ (A @ x), dtype=float)
            self._warm = np.zeros(n)
        self.version = p.version
        self._kernel_args = None
        self._q_nu, self._q_eta = self._solve_M(self.c, self.b, tight=True)
        self._denom = 1.0 + self.c @ self._q_nu + self.b @ self._q_eta

    def kernel_args(self) -> tuple:
        """Flat arrays describing ``A`` and the LU factors, for the compiled loop."""
        self.refresh()
        if self._kernel_args is not None:
            return self._kernel_args
        if self.method != "direct":
            raise ValueError("the compiled loop needs a direct factorization")
        lu = self._lu
        Lf = lu.L.tocsc()
        Uf = lu.U.tocsc()
        Lf.sort_indices()
        Uf.sort_indices()
        if not np.allclose(Lf.diagonal(), 1.0):
            raise NumericalError("expected a unit lower-triangular factor")
        strict_l = sp.tril(Lf, k=-1, format="csc")
        strict_u = sp.triu(Uf, k=1, format="csc")
        i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
        f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
        self._kernel_args = (
            i64(self.A.indptr), i64(self.A.indices), f64(self.A.data),
            i64(self.AT.indptr), i64(self.AT.indices), f64(self.AT.data),
            f64(self.b), f64(self.c), f64(self._q_nu), f64(self._q_eta), float(self._denom),
            i64(lu.perm_r), i64(lu.perm_c),
            i64(strict_l.indptr), i64(strict_l.indices), f64(strict_l.data),
            i64(strict_u.indptr), i64(strict_u.indices), f64(strict_u.data), f64(Uf.diagonal()),
        )
        return self._kernel_args

    def _reduced(self, rhs: np.ndarray, tight: bool = False) -> np.ndarray:
        if self.method == "direct":
            return self._lu.solve(rhs)
        atol = (0.01 if tight else 0.1) * self.tol * (1.0 + np.linalg.norm(rhs))
        x0 = None if tight else self._warm
        sol, info = spla.cg(self._op, rhs, x0=x0, rtol=0.0, atol=atol, maxiter=10 * self.n + 100)
        if info != 0:
            raise NumericalError(f"conjugate gradient did not converge (info={info})")
        if not tight:
            self._warm = sol
        return sol

    def _solve_M(self, r1, r2, tight=False):
        nu = self._reduced(r1 - self.AT @ r2, tight)
        return nu, r2 + self.A @ nu

    def solve(self, w: np.ndarray) -> np.ndarray:
        self.refresh()
        n, m = self.n, self.m
        r1, r2, r3 = w[:n], w[n:n + m], w[-1]
        nu, eta = self._solve_M(r1, r2)
        tau = (r3 + self.c @ nu + self.b @ eta) / self._denom
        z = np.empty(n + m + 1)
        z[:n] = nu - tau * self._q_nu
        z[n:n + m] = eta - tau * self._q_eta
        z[-1] = tau
        return z


def linear_system(problem: ConicProblem, settings: SolverSettings | None = None) -> LinearSystem:
    """Per-problem cached solver for ``I + Q``; refreshed when the data version moves."""
    settings = settings or SolverSettings()
    key = ("linsys", settings.linsolve)
    ls = problem.cache.get(key)
    if ls is None:
        ls = LinearSystem(problem, settings.linsolve, settings.iterative_tol)
        problem.cache[key] = ls
    else:
        ls.refresh()
    return ls


def solve_IplusQ(problem: ConicProblem, w, settings: SolverSettings | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.n + problem.m + 1,):
        raise ValueError(f"expected length {problem.n + problem.m + 1}, got {w.shape}")
    return linear_system(problem, settings).solve(w)


def iterate(problem: ConicProblem, state: IterateState, settings: SolverSettings | None = None) -> IterateState:
    """One full three-step update; returns a new state."""
    settings = settings or SolverSettings()
    ls = linear_system(problem, settings)
    C, _ = embedding_cones(problem)
    x_t = ls.solve(state.x + state.y)
    if settings.alpha != 1.0:
        x_t = settings.alpha * x_t + (1.0 - settings.alpha) * state.x
    x_new = C.projector(x_t - state.y)
    y_new = state.y - x_t + x_new
    return IterateState(x_new, y_new, state.iteration + 1)


def residuals(problem: ConicProblem, nu, eta, mu) -> Residuals:
    A, b, c = problem.A, problem.b, problem.c
    cx, by = float(c @ nu), float(b @ eta)
    return Residuals(
        primal=float(np.linalg.norm(A @ nu + mu - b) / (1.0 + np.linalg.norm(b))),
        dual=float(np.linalg.norm(A.T @ eta + c) / (1.0 + np.linalg.norm(c))),
        gap=abs(cx + by) / (1.0 + abs(cx) + abs(by)),
    )


def check_termination(problem: ConicProblem, state: IterateState, settings: SolverSettings | None = None):
    """Status for the current iterate, or ``None`` to keep iterating.

    Returns ``(status_or_None, SolveResult)``; the result carries the
    current residuals either way.
    """
    settings = settings or SolverSettings()
    eps = settings.eps
    n, m = problem.n, problem.m
    x, y = state.x, state.y
    tau, kappa = state.tau, state.kappa
    res = SolveResult(Status.MAX_ITER, iterations=state.iteration, tau=tau, kappa=kappa)
    if tau > 0:
        nu, eta, mu = x[:n] / tau, x[n:n + m] / tau, y[n:n + m] / tau
        res.residuals = residuals(problem, nu, eta, mu)
        res.primal, res.dual, res.slack = nu, eta, mu
        if res.residuals.within(eps):
            res.status = Status.OPTIMAL
            return Status.OPTIMAL, res
    if tau <= INFEASIBLE_TAU_RATIO * kappa:
        A, b, c = problem.A, problem.b, problem.c
        x_nu, x_eta = x[:n], x[n:n + m]
        b_eta = float(b @ x_eta)
        if b_eta < 0 and np.linalg.norm(A.T @ x_eta) <= eps * np.linalg.norm(x_eta):
            return Status.PRIMAL_INFEASIBLE, SolveResult(
                Status.PRIMAL_INFEASIBLE, certificate=x_eta / -b_eta, residuals=res.residuals,
                iterations=state.iteration, tau=tau, kappa=kappa,
            )
        c_nu = float(c @ x_nu)
        if c_nu < 0 and np.linalg.norm(A @ x_nu + y[n:n + m]) <= eps * np.linalg.norm(x_nu):
            return Status.DUAL_INFEASIBLE, SolveResult(
                Status.DUAL_INFEASIBLE, certificate=x_nu / -c_nu, residuals=res.residuals,
                iterations=state.iteration, tau=tau, kappa=kappa,
            )
    return None, res


class _Scaling:
    """Diagonal equilibration ``A -> D A E`` with scalar rescaling of b and c.

    Row scales are constant across each cone factor so that the cone is
    preserved.
    """

    def __init__(self, problem: ConicProblem, passes: int = 10):
        A = problem.A.tocoo()
        m, n = A.shape
        rows, cols, vals = A.row, A.col, np.abs(A.data)
        offs = problem.cone.offsets()
        factor_of_row = np.repeat(np.arange(len(problem.cone)), np.diff(offs))
        frow = factor_of_row[rows]
        D = np.ones(m)
        E = np.ones(n)
        for _ in range(passes):
            scaled = vals * D[rows] * E[cols]
            row_f = np.zeros(len(problem.cone))
            np.maximum.at(row_f, frow, scaled)
            col = np.zeros(n)
            np.maximum.at(col, cols, scaled)
            d = np.sqrt(row_f)[factor_of_row]
            col = np.sqrt(col)
            d[d < 1e-8] = 1.0
            col[col < 1e-8] = 1.0
            D /= d
            E /= col
        self.D, self.E = D, E
        As = sp.csc_matrix((A.data * D[rows] * E[cols], (rows, cols)), shape=(m, n))
        b = D * problem.b
        c = E * problem.c
        self.sb = 1.0 / max(np.linalg.norm(b), 1e-8)
        self.sc = 1.0 / max(np.linalg.norm(c), 1e-8)
        self.problem = ConicProblem(As, b * self.sb, c * self.sc, problem.cone, problem.dims)

    def unscale(self, x: np.ndarray, y: np.ndarray, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Map an iterate of the scaled embedding back to original units."""
        xo, yo = x.copy(), y.copy()
        xo[:n] = self.E * x[:n] / self.sb
        xo[n:n + m] = self.D * x[n:n + m] / self.sc
        yo[n:n + m] = y[n:n + m] / (self.D * self.sb)
        yo[:n] = y[:n] / (self.E * self.sc)
        return xo, yo


def _emit(sink, line: str):
    if sink is None:
        return
    if callable(sink):
        sink(line)
    else:
        sink.write(line + "\n")


def _check_invariants(problem, C, Cd, ls, w, x_t, x, y, alpha, x_prev):
    if not in_product(C, x, tol=1e-10 * (1.0 + np.linalg.norm(x))):
        raise InvariantViolation("x left the cone C")
    if not in_product(Cd, y, tol=1e-10 * (1.0 + np.linalg.norm(y))):
        raise InvariantViolation("y left the dual cone C*")
    gap = abs(x @ y)
    if gap > 1e-8 * (1.0 + np.linalg.norm(x) * np.linalg.norm(y)):
        raise InvariantViolation(f"complementarity lost: |x'y| = {gap:.3e}")
    raw = x_t if alpha == 1.0 else (x_t - (1.0 - alpha) * x_prev) / alpha
    r = raw + apply_Q(problem, raw) - w
    if np.linalg.norm(r) > 1e-9 * (1.0 + np.linalg.norm(w)):
        raise InvariantViolation(f"linear solve residual {np.linalg.norm(r):.3e}")


def _csr_arrays(A) -> tuple:
    i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    R = A.tocsr()
    RT = A.T.tocsr()
    return (i64(R.indptr), i64(R.indices), f64(R.data), i64(RT.indptr), i64(RT.indices), f64(RT.data))


def _verdict_possible(q: np.ndarray, eps: float) -> bool:
    """Cheap screen on the compiled measurements before a full check."""
    primal, dual, gap, tau, kappa, by, aty, ny, cx, axs, nx = q
    if primal <= eps and dual <= eps and gap <= eps:
        return True
    if tau <= INFEASIBLE_TAU_RATIO * kappa:
        return (by < 0 and aty <= eps * ny) or (cx < 0 and axs <= eps * nx)
    return False


def solve(problem: ConicProblem, settings: SolverSettings | None = None, state: IterateState | None = None) -> SolveResult:
    """Run the splitting iteration until a verdict.

    Starts from ``tau = kappa = 1`` unless ``state`` is given; any state with
    ``x`` in ``C`` and ``y`` in ``C*`` is a valid warm start, for instance
    ``SolveResult.state`` of a solve on a nearby problem with the same
    settings.
    """
    settings = settings or SolverSettings()
    n, m = problem.n, problem.m
    scaling = _Scaling(problem) if settings.normalize else None
    work = scaling.problem if scaling else problem
    ls = linear_system(work, settings)
    C, Cd = embedding_cones(work)
    project = C.projector
    state = state or IterateState.initial(n, m)
    x, y = state.x.copy(), state.y.copy()
    alpha = settings.alpha
    eps = settings.eps
    compiled = settings.engine == "compiled" and settings.linsolve == "direct" and not settings.debug
    if compiled:
        from ._kernels import hsd_chunk, measure

        kargs = ls.kernel_args()
        cone_args = (project.zero_idx, project.nonneg_idx, project.soc_start, project.soc_dim)
        if scaling:
            margs = (scaling.E, scaling.D, scaling.sb, scaling.sc, *_csr_arrays(problem.A), problem.b, problem.c)
        else:
            margs = (np.ones(n), np.ones(m), 1.0, 1.0, *kargs[:8])
    w = np.empty_like(x)
    result = None
    it = state.iteration

    def full_check():
        xo, yo = scaling.unscale(x, y, n, m) if scaling else (x, y)
        return check_termination(problem, IterateState(xo, yo, it), settings)

    def finish(res: SolveResult) -> SolveResult:
        res.iterations = it
        res.state = IterateState(x.copy(), y.copy(), it)
        return res

    while it < settings.max_iter:
        if compiled:
            chunk = min(settings.check_interval - it % settings.check_interval, settings.max_iter - it)
            hsd_chunk(x, y, chunk, alpha, *kargs, *cone_args)
            it += chunk
        else:
            np.add(x, y, out=w)
            x_t = ls.solve(w)
            if alpha != 1.0:
                x_t *= alpha
                x_t += (1.0 - alpha) * x
            x_prev = x
            x = project(x_t - y)
            y = y - x_t + x
            it += 1
            if settings.debug:
                _check_invariants(work, C, Cd, ls, w, x_t, x, y, alpha, x_prev)
        if it % settings.check_interval and it != settings.max_iter:
            continue
        if compiled:
            q = measure(x, y, *margs)
            if not np.all(np.isfinite(q[3:])):
                raise NumericalError(f"non-finite iterate after {it} iterations")
            if settings.trace is not None:
                _emit(settings.trace, f"{it},{q[0]:.6e},{q[1]:.6e},{q[2]:.6e},{q[3]:.6e},{q[4]:.6e}")
            if not _verdict_possible(q, eps):
                continue
            status, result = full_check()
        else:
            status, result = full_check()
            if settings.trace is not None:
                r = result.residuals
                _emit(settings.trace, f"{it},{r.primal:.6e},{r.dual:.6e},{r.gap:.6e},{result.tau:.6e},{result.kappa:.6e}")
        if status is not None:
            log.debug("hsd: %s after %d iterations", status.value, it)
            return finish(result)
    log.debug("hsd: iteration limit %d reached", settings.max_iter)
    _, result = full_check()
    result.status = Status.MAX_ITER
    return finish(result)
