import io

import numpy as np
import pytest
import scipy.sparse as sp

from admmbeam.cones import ConeProduct, in_product, nonneg, soc
from admmbeam.conic import ConicProblem, stuff
from admmbeam.hsd import (
    InvariantViolation,
    IterateState,
    SolverSettings,
    Status,
    apply_Q,
    check_termination,
    embedding_cones,
    iterate,
    linear_system,
    solve,
    solve_IplusQ,
)

from conftest import random_instance, stuffed, unit_config


def _infeasible_unit():
    # theta = 17 exceeds the single-user bound P h^2 / sigma^2 = 16
    _, p = stuffed(unit_config(), np.array([[2.0]]), np.log2(18.0))
    return p


def _random_problem(seed, mode="complex"):
    rng = np.random.default_rng(seed)
    config, h = random_instance(rng, field_mode=mode)
    return stuffed(config, h, 0.2)[1]


def _explicit_Q(p):
    A = p.A.toarray()
    n, m = p.n, p.m
    top = np.hstack([np.zeros((n, n)), A.T, p.c[:, None]])
    mid = np.hstack([-A, np.zeros((m, m)), p.b[:, None]])
    bot = np.hstack([-p.c, -p.b, [0.0]])[None, :]
    return np.vstack([top, mid, bot])


class TestQ:
    def test_zero(self, unit_problem):
        np.testing.assert_array_equal(apply_Q(unit_problem, np.zeros(14)), 0.0)

    def test_skew(self):
        rng = np.random.default_rng(0)
        for seed in range(3):
            p = _random_problem(seed)
            for _ in range(100):
                u = rng.standard_normal(p.n + p.m + 1)
                assert abs(u @ apply_Q(p, u)) <= 1e-10 * (u @ u)

    def test_column_matches_dense(self, unit_problem):
        Q = _explicit_Q(unit_problem)
        e1 = np.zeros(14)
        e1[1] = 1.0
        np.testing.assert_allclose(apply_Q(unit_problem, e1), Q[:, 1], rtol=0, atol=1e-15)
        u = np.random.default_rng(1).standard_normal(14)
        np.testing.assert_allclose(apply_Q(unit_problem, u), Q @ u, rtol=1e-13, atol=1e-13)

    def test_length(self, unit_problem):
        with pytest.raises(ValueError):
            apply_Q(unit_problem, np.zeros(3))


class TestLinearSolve:
    def test_identity_system(self):
        cone = ConeProduct([nonneg(2), soc(3)])
        p = ConicProblem(sp.csc_matrix((5, 3)), np.zeros(5), np.zeros(3), cone)
        w = np.arange(9.0)
        np.testing.assert_allclose(solve_IplusQ(p, w), w, atol=1e-15)

    @pytest.mark.parametrize("linsolve", ["direct", "iterative"])
    def test_residual(self, linsolve):
        rng = np.random.default_rng(2)
        s = SolverSettings(linsolve=linsolve)
        for seed in range(5):
            p = _random_problem(seed)
            w = rng.standard_normal(p.n + p.m + 1)
            z = solve_IplusQ(p, w, s)
            r = z + apply_Q(p, z) - w
            assert np.linalg.norm(r) <= 1e-9 * (1 + np.linalg.norm(w))

    def test_factorization_cached(self):
        config, h = random_instance(np.random.default_rng(3))
        template, p = stuffed(config, h, 0.3)
        ls = linear_system(p)
        w = np.ones(p.n + p.m + 1)
        for _ in range(3):
            solve_IplusQ(p, w)
        assert linear_system(p) is ls and ls.n_factorizations == 1
        stuff(template, p, h, config.power_budgets, np.sqrt(config.noise_powers), config.weights, 0.6)
        z = solve_IplusQ(p, w)
        assert ls.n_factorizations == 2
        assert np.linalg.norm(z + apply_Q(p, z) - w) <= 1e-9 * (1 + np.linalg.norm(w))


class TestIterate:
    def test_trivial_fixed_point(self, unit_problem):
        zero = IterateState(np.zeros(14), np.zeros(14))
        out = iterate(unit_problem, zero)
        np.testing.assert_array_equal(out.x, 0.0)
        np.testing.assert_array_equal(out.y, 0.0)

    def test_solution_is_fixed_point(self, unit_problem):
        res = solve(unit_problem, SolverSettings(eps=1e-12, max_iter=20000))
        s = res.state
        nxt = iterate(unit_problem, s)
        scale = np.linalg.norm(s.x) + np.linalg.norm(s.y)
        assert np.linalg.norm(nxt.x - s.x) + np.linalg.norm(nxt.y - s.y) <= 1e-8 * scale

    @pytest.mark.parametrize("alpha", [1.0, 1.6])
    def test_cone_membership_each_step(self, alpha):
        p = _random_problem(4)
        C, Cd = embedding_cones(p)
        s = IterateState.initial(p.n, p.m)
        settings = SolverSettings(alpha=alpha)
        for _ in range(200):
            s = iterate(p, s, settings)
            nx, ny = np.linalg.norm(s.x), np.linalg.norm(s.y)
            assert in_product(C, s.x, tol=1e-12 * (1 + nx))
            assert in_product(Cd, s.y, tol=1e-12 * (1 + ny))
            assert abs(s.x @ s.y) <= 1e-8 * (1 + nx * ny)


class TestSolve:
    def test_unit_optimal(self, unit_problem):
        res = solve(unit_problem, SolverSettings(eps=1e-4))
        assert res.status is Status.OPTIMAL
        assert res.objective == pytest.approx(0.5, abs=1e-3)
        assert res.primal[3] == pytest.approx(0.5, abs=1e-3)
        assert res.primal[3] ** 2 == pytest.approx(0.25, abs=1e-3)
        assert res.tau > 0 and res.residuals.within(1e-4)

    def test_infeasible(self):
        p = _infeasible_unit()
        res = solve(p, SolverSettings(eps=1e-4))
        assert res.status is Status.PRIMAL_INFEASIBLE
        eta = res.certificate
        assert p.b @ eta < 0
        assert np.linalg.norm(p.A.T @ eta) <= 1e-4 * np.linalg.norm(eta)
        assert in_product(p.cone, eta, tol=1e-9)

    def test_max_iter(self, unit_problem):
        res = solve(unit_problem, SolverSettings(max_iter=23, eps=1e-12))
        assert res.status is Status.MAX_ITER
        assert res.iterations == 23
        assert res.tau > 0 and np.isfinite(res.residuals.primal)

    def test_scaled_data(self, unit_problem):
        s = SolverSettings(eps=1e-6, max_iter=20000)
        base = solve(unit_problem, s)
        scaled = ConicProblem(unit_problem.A, 10 * unit_problem.b, 10 * unit_problem.c, unit_problem.cone)
        res = solve(scaled, s)
        assert res.status is base.status is Status.OPTIMAL
        # x0 and v are unique; y0 and t0 only have to lie in an interval
        np.testing.assert_allclose(res.primal[[0, 3]], 10 * base.primal[[0, 3]], rtol=1e-4)
        assert scaled.b @ res.dual == pytest.approx(100 * (unit_problem.b @ base.dual), rel=1e-4)

    def test_alpha_agreement(self):
        for seed in range(3):
            p = _random_problem(seed)
            a = solve(p, SolverSettings(eps=1e-5, alpha=1.0, max_iter=50000))
            b = solve(p, SolverSettings(eps=1e-5, alpha=1.5, max_iter=50000))
            assert a.status is b.status is Status.OPTIMAL
            assert abs(a.objective - b.objective) <= 1e-3 * abs(a.objective)

    def test_deterministic(self):
        p = _random_problem(5)
        t1, t2 = io.StringIO(), io.StringIO()
        a = solve(p, SolverSettings(trace=t1))
        b = solve(p, SolverSettings(trace=t2))
        assert np.array_equal(a.primal, b.primal) and a.iterations == b.iterations
        assert t1.getvalue() == t2.getvalue()
        first = t1.getvalue().splitlines()[0].split(",")
        assert len(first) == 6 and first[0] == "5"

    @pytest.mark.parametrize("over", [
        dict(engine="numpy"), dict(normalize=True), dict(linsolve="iterative"), dict(debug=True),
    ])
    def test_variants_agree(self, over):
        p = _random_problem(6)
        ref = solve(p, SolverSettings(eps=1e-5, max_iter=50000))
        res = solve(p, SolverSettings(eps=1e-5, max_iter=50000, **over))
        assert res.status is ref.status is Status.OPTIMAL
        assert res.objective == pytest.approx(ref.objective, rel=1e-3)

    def test_engines_match_iterates(self, unit_problem):
        a = solve(unit_problem, SolverSettings(eps=1e-4, engine="numpy"))
        b = solve(unit_problem, SolverSettings(eps=1e-4, engine="compiled"))
        assert a.iterations == b.iterations
        np.testing.assert_allclose(a.state.x, b.state.x, rtol=1e-10, atol=1e-12)

    def test_debug_detects_violation(self, unit_problem, monkeypatch):
        from admmbeam import hsd

        monkeypatch.setattr(hsd, "in_product", lambda *a, **k: False)
        with pytest.raises(InvariantViolation):
            solve(unit_problem, SolverSettings(debug=True, max_iter=5))

    def test_check_termination_continues_at_start(self, unit_problem):
        status, res = check_termination(unit_problem, IterateState.initial(4, 9))
        assert status is None and res.status is Status.MAX_ITER

    @pytest.mark.parametrize("bad", [dict(eps=0.0), dict(alpha=2.0), dict(alpha=0.9), dict(linsolve="x"), dict(max_iter=0)])
    def test_settings_validation(self, bad):
        with pytest.raises(ValueError):
            SolverSettings(**bad)
