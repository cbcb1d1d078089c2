import numpy as np
import pytest
from scipy import linalg

from conftest import random_instance, safe_lambda
from minimax_lq.errors import PenaltyTooSmall
from minimax_lq.finite_horizon import (ValueParams, hinf_worst_disturbance, lqg_riccati_step,
                                       riccati_step, solve_finite, solve_lqg_finite, worst_case_affine,
                                       worst_case_distribution)
from minimax_lq.model import CostSpec, EmpiricalDistribution, LinearSystem


def scalar(A=1.0, B=1.0, Xi=1.0, Q=1.0, R=1.0, Qf=1.0, T=1):
    return LinearSystem([[A]], [[B]], [[Xi]]), CostSpec([[Q]], [[R]], [[Qf]], horizon=T)


def _next(n, P=None):
    return ValueParams(np.zeros((n, n)) if P is None else np.asarray(P, float), np.zeros(n), 0.0)


def test_zero_terminal_value(rng):
    sys, cost, emp = random_instance(rng, 3, 2, 2)
    vp, _ = riccati_step(_next(3), sys, cost, emp, 5.0)
    assert np.allclose(vp.P, cost.Q) and np.allclose(vp.r, 0) and vp.z == 0.0


def test_scalar_step():
    sys, cost = scalar()
    vp, pol = riccati_step(_next(1, [[1.0]]), sys, cost, EmpiricalDistribution([[0.0]]), 10.0)
    assert vp.P[0, 0] == pytest.approx(1.0 + 1.0 / 1.9, rel=1e-14)
    assert pol.K[0, 0] == pytest.approx(-1.0 / 1.9, rel=1e-14)


def test_large_penalty_matches_lqg_step(rng):
    for _ in range(10):
        sys, cost, emp = random_instance(rng, 3, 2, 2)
        P = rng.standard_normal((3, 3))
        nxt = ValueParams(P @ P.T, rng.standard_normal(3), 0.7)
        a, pa = riccati_step(nxt, sys, cost, emp, 1e9)
        b, pb = lqg_riccati_step(nxt, sys, cost, emp)
        assert np.linalg.norm(a.P - b.P) <= 1e-6 * (1 + np.linalg.norm(b.P))
        assert np.linalg.norm(pa.K - pb.K) <= 1e-6 * (1 + np.linalg.norm(pb.K))
        assert np.linalg.norm(a.r - b.r) <= 1e-6 * (1 + np.linalg.norm(b.r))
        assert a.z == pytest.approx(b.z, rel=1e-6, abs=1e-6)


def test_lqg_step_examples(rng):
    sys, cost = scalar()
    e0 = EmpiricalDistribution([[0.0]])
    assert lqg_riccati_step(_next(1), sys, cost, e0)[0].P[0, 0] == pytest.approx(1.0)
    assert lqg_riccati_step(_next(1, [[1.0]]), sys, cost, e0)[0].P[0, 0] == pytest.approx(1.5)
    # textbook form
    sys, cost, emp = random_instance(rng, 3, 2, 2)
    P = np.eye(3) * 2.0
    got = lqg_riccati_step(ValueParams(P, np.zeros(3), 0.0), sys, cost, emp)[0].P
    A, B, R = sys.A, sys.B, cost.R
    ref = cost.Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    assert np.allclose(got, ref, atol=1e-12)


def test_single_stage_unrolling(rng):
    sys, cost, emp = random_instance(rng, 2, 1, 1, horizon=1)
    sol = solve_finite(sys, cost, emp, 50.0)
    vp, pol = riccati_step(ValueParams.terminal(cost), sys, cost, emp, 50.0)
    x = rng.standard_normal(2)
    assert sol.value(x) == pytest.approx(vp(x), rel=1e-13)
    assert np.allclose(sol.K[0], pol.K) and np.allclose(sol.L[0], pol.L)


def test_no_disturbance_channel_is_lqr(rng):
    sys0, cost, _ = random_instance(rng, 3, 2, 1, horizon=6)
    sys = LinearSystem(sys0.A, sys0.B, np.zeros((3, 1)))
    emp = EmpiricalDistribution([[0.0], [0.0]])
    for lam in (0.1, 10.0):
        sol = solve_finite(sys, cost, emp, lam)
        P = cost.Qf
        for t in range(5, -1, -1):
            P = linalg.solve(np.eye(3), cost.Q + sys.A.T @ P @ sys.A - sys.A.T @ P @ sys.B @ np.linalg.solve(
                cost.R + sys.B.T @ P @ sys.B, sys.B.T @ P @ sys.A))
            assert np.allclose(sol.P[t], P, atol=1e-10)
        assert sol.z[0] == pytest.approx(0.0, abs=1e-14)


def test_penalty_too_small_reports_stage():
    sys, cost = scalar(T=5)
    emp = EmpiricalDistribution([[0.0]])
    with pytest.raises(PenaltyTooSmall) as ei:
        solve_finite(sys, cost, emp, 0.5)
    assert ei.value.stage == 5
    assert "PenaltyTooSmall at stage t=5" in str(ei.value)
    # lambda = 1.6 passes P_5 = 1 but fails on P_4 = 1 + 1/(1 + 1.6*(1 - 1/1.6)) = 1.625
    with pytest.raises(PenaltyTooSmall) as ei:
        solve_finite(sys, cost, emp, 1.6)
    assert ei.value.stage == 4


def test_per_stage_distributions(rng):
    sys, cost, _ = random_instance(rng, 2, 1, 1, horizon=3)
    emps = [EmpiricalDistribution(rng.standard_normal((2, 1))) for _ in range(3)]
    sol = solve_finite(sys, cost, emps, 20.0)
    # recompute backwards by hand
    nxt = ValueParams.terminal(cost)
    for t in (2, 1, 0):
        nxt, _ = riccati_step(nxt, sys, cost, emps[t], 20.0)
    assert sol.z[0] == pytest.approx(nxt.z, rel=1e-12)
    with pytest.raises(ValueError):
        solve_finite(sys, cost, emps[:2], 20.0)


def test_solution_p_symmetric_psd(rng):
    for _ in range(10):
        sys, cost, emp = random_instance(rng, 3, 2, 2, horizon=8)
        sol = solve_finite(sys, cost, emp, 1e3)
        for P in sol.P:
            assert np.allclose(P, P.T, atol=0)
            assert np.linalg.eigvalsh(P)[0] >= -1e-9
        assert sol.assumption_margin > 0


def test_value_monotone_in_lambda(rng):
    sys, cost, emp = random_instance(rng, 2, 1, 1, horizon=5)
    x = rng.standard_normal(2)
    lo = safe_lambda(sys, cost, emp, 5, factor=1.01)
    vals = [solve_finite(sys, cost, emp, lam).value(x) for lam in (lo, 2 * lo, 10 * lo, 1e4 * lo)]
    assert all(a >= b - 1e-10 for a, b in zip(vals, vals[1:]))


def test_worst_case_large_penalty_stays_at_samples(rng):
    sys, cost, emp = random_instance(rng, 2, 1, 1, horizon=1)
    sol = solve_finite(sys, cost, emp, 1e9)
    mu = worst_case_distribution(0, rng.standard_normal(2), sol, sys, emp)
    assert np.allclose(mu.support, emp.support, atol=1e-6)


def test_worst_case_scalar_value():
    sys, cost = scalar(B=0.0, T=1)
    emp = EmpiricalDistribution([[1.0]])
    sol = solve_finite(sys, cost, emp, 10.0)
    mu = worst_case_distribution(0, [0.0], sol, sys, emp)
    assert mu.support[0, 0] == pytest.approx(10.0 / 9.0, rel=1e-14)
    grid = np.linspace(-5, 5, 100001)
    best = grid[np.argmax(grid ** 2 - 10.0 * (grid - 1.0) ** 2)]
    assert abs(best - 10.0 / 9.0) <= 1e-4


def test_worst_case_atoms_maximize_per_sample(rng):
    sys, cost, emp = random_instance(rng, 1, 1, 1, N=3, horizon=2)
    sol = solve_finite(sys, cost, emp, 8.0)
    x = np.array([0.7])
    u = sol.policy(0)(x)
    mu = worst_case_distribution(0, x, sol, sys, emp)
    grid = np.linspace(-5, 5, 20001)
    for i, wh in enumerate(emp.support[:, 0]):
        nxt = sys.A @ x + sys.B @ u
        vals = [sol.value(nxt + sys.Xi[:, 0] * w, 1) - 8.0 * (w - wh) ** 2 for w in grid]
        assert abs(grid[int(np.argmax(vals))] - mu.support[i, 0]) <= grid[1] - grid[0]


def _stage_objective(x, u, ws, sol, sys, cost, emp, t):
    nxt = sys.A @ x + sys.B @ u
    val = x @ cost.Q @ x + u @ cost.R @ u
    return val + np.mean([sol.value(nxt + sys.Xi @ w, t + 1) - sol.lam * np.sum((w - wh) ** 2)
                          for w, wh in zip(ws, emp.support)])


def _inner_max(x, u, sol, sys, emp, t):
    P, r = sol.P[t + 1], sol.r[t + 1]
    H = sol.lam * np.eye(sys.k) - sys.Xi.T @ P @ sys.Xi
    base = sys.Xi.T @ (P @ (sys.A @ x + sys.B @ u) + r)
    return np.linalg.solve(H, base[:, None] + sol.lam * emp.support.T).T


def test_stage_saddle_property(rng):
    d = 1e-3
    for _ in range(5):
        sys, cost, emp = random_instance(rng, 2, 2, 2, N=3, horizon=3)
        sol = solve_finite(sys, cost, emp, safe_lambda(sys, cost, emp, 3))
        for t in range(3):
            x = rng.standard_normal(2)
            u = sol.policy(t)(x)
            ws = worst_case_distribution(t, x, sol, sys, emp).support
            J = _stage_objective(x, u, ws, sol, sys, cost, emp, t)
            assert J == pytest.approx(sol.value(x, t), rel=1e-10, abs=1e-10)
            for j in range(2):
                for s in (d, -d):
                    up = u.copy()
                    up[j] += s
                    Jp = _stage_objective(x, up, _inner_max(x, up, sol, sys, emp, t), sol, sys, cost, emp, t)
                    assert Jp - J >= -1e-8
            for i in range(3):
                for j in range(2):
                    for s in (d, -d):
                        wp = ws.copy()
                        wp[i, j] += s
                        assert _stage_objective(x, u, wp, sol, sys, cost, emp, t) - J <= 1e-8


def test_hinf_disturbance_and_shift_identity(rng):
    sys, cost, emp = random_instance(rng, 3, 2, 2, N=4, horizon=3)
    lam = safe_lambda(sys, cost, emp, 3)
    sol = solve_finite(sys, cost, emp, lam)
    assert np.allclose(hinf_worst_disturbance(1, np.zeros(3), sol, sys), 0.0)
    x = rng.standard_normal(3)
    for t in range(3):
        mu = worst_case_distribution(t, x, sol, sys, emp)
        g = hinf_worst_disturbance(t, x, sol, sys)
        P, r = sol.P[t + 1], sol.r[t + 1]
        H = lam * np.eye(2) - sys.Xi.T @ P @ sys.Xi
        shift = np.linalg.solve(H, (sys.Xi.T @ P @ sys.B @ sol.L[t] + sys.Xi.T @ r)[:, None]
                                + lam * emp.support.T).T
        assert np.allclose(mu.support - g, shift, atol=1e-12)


def test_zero_mean_worst_case_mean_is_hinf(rng):
    sys, cost, _ = random_instance(rng, 2, 1, 1, horizon=1)
    S = rng.standard_normal((4, 1))
    emp = EmpiricalDistribution(S - S.mean(axis=0))
    sol = solve_finite(sys, cost, emp, 25.0)
    assert np.allclose(sol.L[0], 0) and np.allclose(sol.r[1], 0)
    x = rng.standard_normal(2)
    mu = worst_case_distribution(0, x, sol, sys, emp)
    assert np.allclose(mu.mean, hinf_worst_disturbance(0, x, sol, sys), atol=1e-12)


def test_worst_case_affine_shapes(rng):
    sys, cost, emp = random_instance(rng, 3, 2, 2, N=5, horizon=2)
    sol = solve_finite(sys, cost, emp, safe_lambda(sys, cost, emp, 2))
    G, C = worst_case_affine(0, sol, sys, emp)
    assert G.shape == (2, 3) and C.shape == (5, 2)
    with pytest.raises(IndexError):
        worst_case_affine(2, sol, sys, emp)


def test_lqg_finite_matches_large_penalty(rng):
    sys, cost, emp = random_instance(rng, 3, 2, 2, horizon=10)
    a = solve_finite(sys, cost, emp, 1e9)
    b = solve_lqg_finite(sys, cost, emp)
    for t in range(11):
        assert np.linalg.norm(a.P[t] - b.P[t]) <= 1e-6 * (1 + np.linalg.norm(b.P[t]))
