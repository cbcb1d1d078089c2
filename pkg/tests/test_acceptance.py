"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS criterion N ...`` or ``FAIL criterion N ...``
line straight to the terminal (bypassing capture) and then asserts. Run
``python3 tests/test_acceptance.py`` for just this suite.
"""

import itertools
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_instance, well_conditioned_instance
from minimax_lq import kernels
from minimax_lq.cli import main as cli_main
from minimax_lq.finite_horizon import solve_finite, solve_lqg_finite
from minimax_lq.infinite_horizon import (bellman_residual, check_assumptions, hinf_attenuation_level,
                                         mean_state_map, solve_are_eigen, solve_are_fixed_point,
                                         stability_certificates, symplectic_matrix)
from minimax_lq.model import AffinePolicy, CostSpec, EmpiricalDistribution, LinearSystem
from minimax_lq.powergrid import run_grid_demo
from minimax_lq.robustness import (K4_LIMIT, RadiusParams, assignment_cost, k4_residual, radius_compact,
                                   radius_light_tail, radius_sensitivity)
from minimax_lq.simulator import Sampler, WorstCaseSteady, estimate_reliability, per_run_costs
from minimax_lq.tuning import (find_lambda_hat_finite, find_lambda_profile_infinite, finite_objective,
                               optimize_lambda_finite, optimize_lambda_infinite, rho_of_lambda)

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return _report


# ----------------------------------------------------------------- 1. grid DP

GRID = np.linspace(-5.0, 5.0, 401)


def _lookup(V, pts):
    """Linear interpolation on the grid; NaN outside it or next to excluded nodes."""
    vals = np.interp(pts, GRID, V)
    outside = (pts < GRID[0]) | (pts > GRID[-1])
    return np.where(outside, np.nan, vals)


def grid_minmax_dp(a, b, xi, q, r, qf, samples, lam, T, x0):
    """Brute-force min-max dynamic program with u and every w on the state grid."""
    V = qf * GRID ** 2
    y, w = GRID[:, None], GRID[None, :]
    x, u = GRID[:, None], GRID[None, :]
    for _ in range(T):
        M = np.zeros(GRID.size)
        for s in samples:
            vals = _lookup(V, y + xi * w) - lam * (w - s) ** 2
            M += np.max(np.where(np.isnan(vals), -np.inf, vals), axis=1)
        M /= len(samples)
        M[~np.isfinite(M)] = np.nan
        vals = q * x ** 2 + r * u ** 2 + _lookup(M, a * x + b * u)
        V = np.min(np.where(np.isnan(vals), np.inf, vals), axis=1)
        V[~np.isfinite(V)] = np.nan
    return float(np.interp(x0, GRID, V))


def test_criterion_01_grid_dp(report):
    rng = np.random.default_rng(101)
    tol = 2 * (GRID[1] - GRID[0])
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        a, b, xi = rng.uniform(-1.2, 1.2), rng.uniform(0.5, 1.5), rng.uniform(-1.0, 1.0)
        q, r, qf = rng.uniform(0.5, 1.5, 3)
        s, x0 = rng.uniform(-1.0, 1.0, 2), rng.uniform(-1.0, 1.0)
        sys_ = LinearSystem([[a]], [[b]], [[xi]])
        cost = CostSpec([[q]], [[r]], [[qf]], horizon=3)
        emp = EmpiricalDistribution(s[:, None])
        lam = 2.0 * find_lambda_hat_finite(sys_, cost, emp, 3) + 1.0
        v = solve_finite(sys_, cost, emp, lam).value(np.array([x0]))
        worst = max(worst, abs(v - grid_minmax_dp(a, b, xi, q, r, qf, s, lam, 3, x0)))
    elapsed = time.perf_counter() - t0
    report(1, worst <= tol and elapsed < 60.0,
           f"max |V0 - grid DP| = {worst:.2e} (tol {tol:.3f}) on 20 instances in {elapsed:.1f} s")


# ---------------------------------------------------------------- 2. LQG limit

def test_criterion_02_lqg_limit(report):
    rng = np.random.default_rng(102)
    worst = 0.0
    for i in range(20):
        n = 1 + i % 4
        sys_, cost, emp = random_instance(rng, n, max(1, n - 1), 2, horizon=10)
        big = solve_finite(sys_, cost, emp, 1e9)
        lqg = solve_lqg_finite(sys_, cost, emp)
        for t in range(11):
            gap = np.linalg.norm(big.P[t] - lqg.P[t]) / (1.0 + np.linalg.norm(lqg.P[t]))
            worst = max(worst, gap)
    report(2, worst <= 1e-6, f"max ||P_t(1e9) - P_t(LQG)||_F / (1+||P||) = {worst:.2e} on 20 instances")


# ------------------------------------------------- 3-4. dual methods, stability

def _steady_instances(seed, count):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = 1 + len(out) % 4
        sys_, cost, emp = random_instance(rng, n, rng.integers(1, n + 1), 2, scale=rng.uniform(0.5, 1.5))
        if abs(np.linalg.det(sys_.A)) < 1e-3:
            continue
        lam = 2.0 * hinf_attenuation_level(sys_, cost, tol=1e-4) + 1.0
        if check_assumptions(sys_, cost, lam).ok:
            out.append((sys_, cost, emp, lam))
    return out


STEADY = {}


def steady_instances():
    if not STEADY:
        STEADY["list"] = _steady_instances(103, 50)
    return STEADY["list"]


def test_criterion_03_dual_methods(report):
    worst, pairing_ok = 0.0, True
    for sys_, cost, emp, lam in steady_instances():
        fp = solve_are_fixed_point(sys_, cost, emp, lam)
        ei = solve_are_eigen(sys_, cost, lam, emp)
        worst = max(worst, np.linalg.norm(fp.P_ss - ei.P_ss) / (1.0 + np.linalg.norm(fp.P_ss)))
        gam = np.linalg.eigvals(symplectic_matrix(sys_, cost, lam))
        pairing_ok &= int((np.abs(gam) < 1.0).sum()) == sys_.n
    report(3, worst <= 1e-6 and pairing_ok,
           f"50 instances: max relative gap {worst:.2e}, n stable eigenvalues every time: {pairing_ok}")


def test_criterion_04_stability(report):
    worst_cl, worst_mean, worst_lim = 0.0, 0.0, 0.0
    for sys_, cost, emp, lam in steady_instances():
        sol = solve_are_fixed_point(sys_, cost, emp, lam)
        rep = stability_certificates(sol, sys_)
        worst_cl = max(worst_cl, rep.closed_loop_radius)
        worst_mean = max(worst_mean, rep.mean_state_radius)
        F, f = mean_state_map(sol, sys_, emp)
        m = np.zeros(sys_.n)
        for _ in range(10_000):
            m = F @ m + f
        worst_lim = max(worst_lim, np.linalg.norm(m - rep.mean_state_limit))
    ok = worst_cl < 1.0 and worst_mean < 1.0 and worst_lim <= 1e-6
    report(4, ok, f"max rho(A+BK) = {worst_cl:.4f}, max rho((I+Phi P)^-1 A) = {worst_mean:.4f}, "
                  f"mean-state error after 1e4 steps = {worst_lim:.2e}")


# ------------------------------------------------------ 5-6. Bellman, Cesaro

def _good(seed, count):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        sys_, cost, emp = well_conditioned_instance(rng)
        if check_assumptions(sys_, cost, 50.0).ok:
            out.append((sys_, cost, emp, 50.0, rng))
    return out


def test_criterion_05_bellman(report):
    worst = 0.0
    for sys_, cost, emp, lam, rng in _good(105, 20):
        sol = solve_are_fixed_point(sys_, cost, emp, lam)
        res = bellman_residual(sol, sys_, cost, emp, lam, rng.standard_normal((100, sys_.n)))
        worst = max(worst, res / (1.0 + abs(sol.rho)))
    report(5, worst <= 1e-8, f"max residual / (1+|rho|) = {worst:.2e} at 100 states on 20 instances")


def test_criterion_06_average_cost(report):
    worst = 0.0
    for sys_, cost, emp, lam, _ in _good(106, 10):
        sol = solve_are_fixed_point(sys_, cost, emp, lam)
        fin = solve_finite(sys_, CostSpec(cost.Q, cost.R, horizon=500), emp, lam)
        worst = max(worst, abs(fin.z[0] / 500 - sol.rho) / (1.0 + abs(sol.rho)))
    report(6, worst <= 1e-3, f"max |z0/T - rho| / (1+|rho|) = {worst:.2e} at T=500 on 10 instances")


# ------------------------------------------------------------- 7. saddle MC

def test_criterion_07_saddle(report):
    rng = np.random.default_rng(107)
    T, runs = 10_000, 100
    x0 = None
    lines, ok = [], True
    insts = [(LinearSystem([[0.9]], [[1.0]], [[1.0]]), CostSpec([[1.0]], [[1.0]]),
              EmpiricalDistribution([[0.5], [-0.2], [0.3]]), 6.0)]
    for sys_, cost, emp, lam, _ in _good(117, 2):
        insts.append((sys_, cost, emp, lam))
    for j, (sys_, cost, emp, lam) in enumerate(insts):
        sol = solve_are_fixed_point(sys_, cost, emp, lam)
        x0 = np.zeros(sys_.n)
        G0 = WorstCaseSteady(sol, sys_, emp).G[0]

        def jtilde(policy, dist, seed):
            vals = per_run_costs(sys_, policy, dist, x0, T, runs, seed, cost, lam, penalized=True,
                                 terminal=sol.h)
            return vals.mean(), vals.std(ddof=1) / math.sqrt(runs)

        upper = []
        for i in range(5):
            shift = 0.3 * rng.standard_normal(sys_.k)
            dist = WorstCaseSteady(sol, sys_, emp, shift=shift, gain_scale=1.0 - 0.2 * (i + 1) / 5)
            upper.append(jtilde(sol, dist, 1000 + i))
        lower = []
        worst = WorstCaseSteady(sol, sys_, emp)
        for i in range(5):
            while True:
                dK = 0.1 * rng.standard_normal(sol.K_ss.shape)
                F = sys_.A + sys_.B @ (sol.K_ss + dK) + sys_.Xi @ G0
                if np.max(np.abs(np.linalg.eigvals(F))) < 0.95:
                    break
            pol = AffinePolicy(sol.K_ss + dK, sol.L_ss + 0.1 * rng.standard_normal(sys_.m))
            lower.append(jtilde(pol, worst, 2000 + i))
        up_ok = all(m <= sol.rho + 3 * se for m, se in upper)
        lo_ok = all(m >= sol.rho - 3 * se for m, se in lower)
        ok &= up_ok and lo_ok
        lines.append(f"inst {j}: rho={sol.rho:.5f}, max J(pi*,g)={max(m for m, _ in upper):.5f}, "
                     f"min J(pi,g*)={min(m for m, _ in lower):.5f}")
    report(7, ok, "; ".join(lines))


# ------------------------------------------------------------ 8. tuning audits

def _midpoint_ok(f, lams, slack=1e-8):
    vals = [f(v) for v in lams]
    for i in range(len(lams) - 2):
        a, b = lams[i], lams[i + 2]
        if f(0.5 * (a + b)) > 0.5 * (vals[i] + vals[i + 2]) + slack:
            return False
    return True


def test_criterion_08_tuning(report):
    rng = np.random.default_rng(108)
    ok_conv, ok_mono, ok_min = True, True, True
    tol = 1e-6
    for _ in range(4):
        sys_, cost, emp = random_instance(rng, 2, 1, 1, horizon=12)
        x0 = rng.standard_normal(2)
        lh = find_lambda_hat_finite(sys_, cost, emp, 12, tol)
        lams = lh + np.geomspace(1e-3, 1e3, 50) * (1.0 + lh)
        f = finite_objective(sys_, cost, emp, 12, x0, 0.3)
        ok_conv &= _midpoint_ok(f, lams)
        f0 = [finite_objective(sys_, cost, emp, 12, x0, 0.0)(v) for v in lams]
        ok_mono &= all(b <= a + 1e-8 for a, b in zip(f0, f0[1:]))
        tp = optimize_lambda_finite(sys_, cost, emp, 12, x0, 0.3, tol, lam_hat=lh)
        fs = f(tp.lambda_star)
        ok_min &= f(tp.lambda_star + tol) >= fs - 1e-10 and f(tp.lambda_star - tol) >= fs - 1e-10
    for _, (sys_, cost, emp, lam, _) in zip(range(3), _good(118, 3)):
        prof = find_lambda_profile_infinite(sys_, cost, emp, tol=tol)
        lams = prof.lambda_hat_inf + np.geomspace(1e-3, 1e3, 50) * (1.0 + prof.lambda_hat_inf)
        rho = [rho_of_lambda(sys_, cost, emp, v) for v in lams]
        ok_mono &= all(b <= a + 1e-8 for a, b in zip(rho, rho[1:]))
        g = lambda v: v * 0.09 + rho_of_lambda(sys_, cost, emp, v)  # noqa: E731
        ok_conv &= _midpoint_ok(g, lams)
        tp = optimize_lambda_infinite(sys_, cost, emp, 0.3, tol, profile=prof)
        gs = g(tp.lambda_star)
        ok_min &= g(tp.lambda_star + tol) >= gs - 1e-10 and g(tp.lambda_star - tol) >= gs - 1e-10
    report(8, ok_conv and ok_mono and ok_min,
           f"midpoint convexity {ok_conv}, monotone audits {ok_mono}, golden-section local min {ok_min} "
           f"(4 finite and 3 steady instances, 50-point grids)")


# ------------------------------------------------------------- 9. W2 oracle

def test_criterion_09_assignment(report):
    rng = np.random.default_rng(109)
    mismatches = 0
    for trial in range(200):
        n = 1 + trial % 6
        X, Y = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        C = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=2)
        brute = min(math.fsum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        hung, _ = assignment_cost(C, "hungarian")
        exh, _ = assignment_cost(C, "exhaustive")
        mismatches += (hung != brute) + (exh != brute)
    report(9, mismatches == 0, f"200 trials with N <= 6: {mismatches} mismatches against brute force "
                               f"(kernel backend {kernels.BACKEND})")


# ------------------------------------------------------------ 10. radius

def test_criterion_10_radius(report):
    beta = 0.05
    gaps = []
    for k in range(1, 8):
        lo = radius_light_tail(RadiusParams(1, beta, 1, k, c1=beta * math.exp(1 - 1e-10)))
        hi = radius_light_tail(RadiusParams(1, beta, 1, k, c1=beta * math.exp(1 + 1e-10)))
        gaps.append(abs(lo - hi))
    lo = radius_light_tail(RadiusParams(1, beta, 1, 4, c1=beta * math.exp(K4_LIMIT - 1e-12)))
    hi = radius_light_tail(RadiusParams(1, beta, 1, 4, c1=beta * math.exp(K4_LIMIT + 1e-12)))
    gaps.append(abs(lo - hi))
    cont_ok = max(gaps) <= 1e-6
    res = 0.0
    for c in np.geomspace(1e-9, K4_LIMIT * (1 - 1e-9), 25):
        p = RadiusParams(1, beta, 1, 4, c1=beta * math.exp(c), zeta=2.0)
        res = max(res, k4_residual(radius_light_tail(p), c), k4_residual(radius_compact(p), c, 2.0))
    mono = True
    for compact in (False, True):
        fn = radius_compact if compact else radius_light_tail
        z = 1.0 if compact else None
        for k in (2, 4, 6):
            radius_sensitivity(RadiusParams(1, beta, 10, k, zeta=z), [1, 5, 10, 50, 100, 1000], compact)
            byT = [fn(RadiusParams(10, beta, T, k, zeta=z)) for T in (1, 10, 100, 1000)]
            byB = [fn(RadiusParams(10, b, 10, k, zeta=z)) for b in (0.01, 0.05, 0.2, 0.5, 0.9)]
            mono &= all(a <= b for a, b in zip(byT, byT[1:])) and all(a >= b for a, b in zip(byB, byB[1:]))
    report(10, cont_ok and res <= 1e-10 and mono,
           f"max branch gap {max(gaps):.1e}, k=4 residual {res:.1e}, monotone in N, T, beta: {mono}")


# --------------------------------------------------------- 11. reliability

def test_criterion_11_reliability(report):
    sys_ = LinearSystem([[1.0, 0.1], [0.0, 1.0]], [[0.0], [0.1]], [[0.0], [0.1]])
    cost = CostSpec(np.eye(2), np.eye(1), horizon=10)
    truth = Sampler([0.02], [[0.3 ** 2]])
    N, T = 10, 10
    formula = radius_light_tail(RadiusParams(N, 0.05, T, 1))
    thetas = [0.01, 0.05, 0.1, 0.2, formula]
    rel = [estimate_reliability(sys_, cost, truth, N, th, None, T, 200, 11, np.array([1.0, 0.0]))
           for th in thetas]
    mono = all(a <= b for a, b in zip(rel, rel[1:]))
    table = ", ".join(f"{t:.3g}->{r:.3f}" for t, r in zip(thetas, rel))
    report(11, mono and rel[-1] >= 0.95, f"reliability by theta (200 trials, N=10): {table}")


# ----------------------------------------------------------- 12. grid demo

def test_criterion_12_grid_demo(report):
    res = run_grid_demo(runs=1000, seed=0)
    avg = res.averages
    p = res.paired_pvalue()
    report(12, avg["minimax"] < avg["lqg"] and p < 0.05,
           f"average settling time minimax {avg['minimax']:.2f} s vs LQG {avg['lqg']:.2f} s "
           f"(lambda*={res.lambda_star:.4f}, 1000 runs, paired one-sided p={p:.2e})")


# --------------------------------------------------------- 13. determinism

def test_criterion_13_determinism(report, tmp_path):
    scen = ROOT / "scenarios"
    commands = [
        ["solve-finite", "--scenario", scen / "double_integrator.ini", "--theta", "0.2"],
        ["solve-infinite", "--scenario", scen / "scalar.ini"],
        ["tune", "--scenario", scen / "double_integrator.ini"],
        ["radius", "--beta", "0.01,0.05", "--horizon", "10"],
        ["simulate", "--scenario", scen / "double_integrator.ini", "--runs", "200", "--theta", "0.2"],
        ["simulate", "--scenario", scen / "scalar.ini", "--runs", "50", "--mode", "empirical"],
        ["reliability", "--scenario", scen / "double_integrator.ini", "--runs", "20", "--horizon", "10"],
        ["grid-demo", "--scenario", scen / "grid_demo.ini", "--runs", "50"],
    ]
    bad = []
    for i, cmd in enumerate(commands):
        argv = [str(a) for a in cmd]
        first, second, third = (tmp_path / f"{i}_{tag}" for tag in "abc")
        if cli_main(argv + ["--out", str(first)]) != 0 or cli_main(argv + ["--out", str(second)]) != 0:
            bad.append(f"{cmd[0]} failed")
            continue
        if cli_main(["replay", str(first / "manifest.json"), "--out", str(third)]) != 0:
            bad.append(f"{cmd[0]} replay mismatch")
        for f in sorted(first.glob("*.csv")):
            if f.read_bytes() != (second / f.name).read_bytes() or f.read_bytes() != (third / f.name).read_bytes():
                bad.append(f"{cmd[0]}:{f.name}")
    report(13, not bad, f"{len(commands)} commands re-run and replayed, differing outputs: {bad or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
