"""Steady-state (average-cost) solution of the penalized minimax LQ problem.

Two independent routes to the stabilizing ARE solution are provided: plain
fixed-point iteration of the Riccati map, and the stable invariant subspace
of the associated symplectic matrix (nonsingular ``A`` only).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import (AssumptionViolated, IllConditionedU1, NoConvergence, NoFiniteLevel,
                     NumericalError, PenaltyTooSmall, SingularA, UnstableSubspaceDefect)
from .finite_horizon import (TOL_PD, ValueParams, _check_margin, _step, _worst_case_affine,
                             lqg_riccati_step, penalty_margin, penalty_matrix)
from .model import CostSpec, DiscreteDistribution, EmpiricalDistribution, LinearSystem, require_valid

RANK_TOL = 1e-8
MAX_COND_A = 1e10
MAX_COND_U1 = 1e12
IMAG_TOL = 1e-8


@dataclass(frozen=True)
class AssumptionCertificate:
    phi_min_eig: float
    stabilizable: bool
    observable: bool
    penalty_margin: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.phi_min_eig >= -TOL_PD and self.stabilizable and self.observable

    def reasons(self):
        out = []
        if self.phi_min_eig < -TOL_PD:
            out.append(f"Phi not PSD (min eigenvalue {self.phi_min_eig:.3e})")
        if not self.stabilizable:
            out.append("(A, Phi^1/2) not stabilizable")
        if not self.observable:
            out.append("(A, Q^1/2) not observable")
        return out


@dataclass(frozen=True)
class SteadySolution:
    P_ss: np.ndarray
    r_ss: np.ndarray
    rho: float
    K_ss: np.ndarray
    L_ss: np.ndarray
    closed_loop_spectral_radius: float
    mean_state_gain_radius: float
    method: str
    lam: float
    Phi: np.ndarray
    wbar: np.ndarray
    are_residual: float
    penalty_margin: float
    iterations: int = 0

    def h(self, x) -> float:
        """Bias function ``x' P x + 2 r' x``."""
        x = np.asarray(x, dtype=float)
        return float(x @ self.P_ss @ x + 2.0 * self.r_ss @ x)

    def policy(self):
        from .model import AffinePolicy

        return AffinePolicy(self.K_ss, self.L_ss)


@dataclass(frozen=True)
class StabilityReport:
    closed_loop_radius: float
    mean_state_radius: float
    mean_state_limit: np.ndarray

    @property
    def stable(self) -> bool:
        return self.closed_loop_radius < 1.0 and self.mean_state_radius < 1.0


def _psd_sqrt(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _krylov(A, F):
    n = A.shape[0]
    blocks = [F]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _rank_basis(M, tol=RANK_TOL):
    U, s, _ = np.linalg.svd(M)
    if s.size == 0 or s[0] == 0.0:
        return 0, U
    return int(np.sum(s > tol * s[0])), U


def is_stabilizable(A, F, tol=RANK_TOL) -> bool:
    """Stabilizability of ``(A, F)`` through a Kalman decomposition.

    Modes outside the controllable subspace must lie strictly inside the unit
    circle.
    """
    n = A.shape[0]
    r, U = _rank_basis(_krylov(A, F), tol)
    if r == n:
        return True
    U2 = U[:, r:]
    A22 = U2.T @ A @ U2
    return bool(np.max(np.abs(np.linalg.eigvals(A22))) < 1.0)


def is_observable(A, C, tol=RANK_TOL) -> bool:
    r, _ = _rank_basis(_krylov(A.T, C.T), tol)
    return r == A.shape[0]


def check_assumptions(sys: LinearSystem, cost: CostSpec, lam: float, P=None) -> AssumptionCertificate:
    """Sign of ``Phi``, stabilizability of ``(A, Phi^1/2)`` and observability of ``(A, Q^1/2)``.

    ``penalty_margin`` is filled in only when a candidate ``P`` is given.
    """
    Phi = penalty_matrix(sys, cost, lam)
    phi_min = float(np.linalg.eigvalsh(Phi)[0])
    stab = is_stabilizable(sys.A, _psd_sqrt(Phi))
    obs = is_observable(sys.A, _psd_sqrt(cost.Q))
    margin = float("nan") if P is None else penalty_margin(np.asarray(P), sys.Xi, lam)
    return AssumptionCertificate(phi_min, stab, obs, margin)


def _zero_emp(sys):
    return EmpiricalDistribution(np.zeros((1, sys.k)))


def are_map(P, sys, cost, Phi):
    """One application of ``P -> Q + A'(I + P Phi)^{-1} P A``."""
    M = np.eye(sys.n) + P @ Phi
    out = cost.Q + sys.A.T @ np.linalg.solve(M, P @ sys.A)
    return 0.5 * (out + out.T)


def _finish(P, sys, cost, emp, lam, method, iterations=0):
    n = sys.n
    margin = _check_margin(P, sys.Xi, lam, None)
    Phi = penalty_matrix(sys, cost, lam)
    M = np.eye(n) + P @ Phi
    AtMinv = np.linalg.solve(M.T, sys.A).T
    r = np.linalg.solve(np.eye(n) - AtMinv, AtMinv @ P @ sys.Xi @ emp.mean)
    _, _, rho, K, L = _step(P, r, 0.0, sys, cost, Phi, emp.mean, emp.second_moment, lam)
    res = float(np.linalg.norm(P - are_map(P, sys, cost, Phi)))
    cl = float(np.max(np.abs(np.linalg.eigvals(sys.A + sys.B @ K))))
    ms = float(np.max(np.abs(np.linalg.eigvals(np.linalg.solve(np.eye(n) + Phi @ P, sys.A)))))
    arrays = [P, r, K, L, Phi]
    for a in arrays:
        a.flags.writeable = False
    return SteadySolution(P, r, float(rho), K, L, cl, ms, method, float(lam), Phi,
                          np.array(emp.mean), res, margin, iterations)


def solve_are_fixed_point(sys: LinearSystem, cost: CostSpec, emp: Optional[EmpiricalDistribution],
                          lam: float, max_iter: int = 100_000, tol: float = 1e-12, P0=None,
                          check: bool = True) -> SteadySolution:
    """Iterate the Riccati map from ``P0`` (default ``Qf``) to its limit.

    Every iterate must keep ``lam*I - Xi' P Xi`` positive definite; the
    first that does not raises :class:`PenaltyTooSmall` with the iterate
    index as its stage.
    """
    emp = emp or _zero_emp(sys)
    require_valid(sys, cost, emp)
    if check:
        cert = check_assumptions(sys, cost, lam)
        if not cert.ok:
            raise AssumptionViolated("; ".join(cert.reasons()))
    Phi = penalty_matrix(sys, cost, lam)
    P = np.array(cost.Qf if P0 is None else P0, dtype=float)
    step = np.inf
    for it in range(1, max_iter + 1):
        _check_margin(P, sys.Xi, lam, it)
        P_new = are_map(P, sys, cost, Phi)
        if not np.all(np.isfinite(P_new)):
            raise NoConvergence(it, float("inf"))
        step = float(np.linalg.norm(P_new - P))
        P = P_new
        if step <= tol * (1.0 + np.linalg.norm(P)):
            return _finish(P, sys, cost, emp, lam, "FixedPoint", it)
    raise NoConvergence(max_iter, step)


def symplectic_matrix(sys: LinearSystem, cost: CostSpec, lam: float) -> np.ndarray:
    """``[[A + Phi A^-T Q, -Phi A^-T], [-A^-T Q, A^-T]]``; needs nonsingular ``A``."""
    A = sys.A
    condA = np.linalg.cond(A)
    if not condA < MAX_COND_A:
        raise SingularA(f"A is numerically singular (cond={condA:.3e})")
    Phi = penalty_matrix(sys, cost, lam)
    AinvT = np.linalg.solve(A.T, np.eye(sys.n))
    return np.block([[A + Phi @ AinvT @ cost.Q, -Phi @ AinvT],
                     [-AinvT @ cost.Q, AinvT]])


def solve_are_eigen(sys: LinearSystem, cost: CostSpec, lam: float,
                    emp: Optional[EmpiricalDistribution] = None, fallback: bool = False) -> SteadySolution:
    """Stabilizing ARE solution from the stable eigenvectors of the symplectic matrix.

    With ``fallback=True`` a singular ``A`` is handed to
    :func:`solve_are_fixed_point` instead of raising :class:`SingularA`.
    """
    emp = emp or _zero_emp(sys)
    require_valid(sys, cost, emp)
    n = sys.n
    try:
        H = symplectic_matrix(sys, cost, lam)
    except SingularA:
        if fallback:
            return solve_are_fixed_point(sys, cost, emp, lam)
        raise
    gam, V = np.linalg.eig(H)
    mod = np.abs(gam)
    stable = mod < 1.0
    if stable.sum() != n or np.any(np.abs(mod - 1.0) < 1e-9):
        raise UnstableSubspaceDefect(
            f"{int(stable.sum())} stable eigenvalues for n={n} "
            f"(closest modulus to 1: {mod[np.argmin(np.abs(mod - 1.0))]:.12g})")
    U1, U2 = V[:n, stable], V[n:, stable]
    c = np.linalg.cond(U1)
    if not c < MAX_COND_U1:
        raise IllConditionedU1(f"stable basis block U1 has cond={c:.3e}")
    Pc = np.linalg.solve(U1.T, U2.T).T
    if np.linalg.norm(Pc.imag) > IMAG_TOL * (1.0 + np.linalg.norm(Pc.real)):
        raise IllConditionedU1(f"ARE solution has imaginary part {np.linalg.norm(Pc.imag):.3e}")
    P = 0.5 * (Pc.real + Pc.real.T)
    return _finish(P, sys, cost, emp, lam, "Eigen")


def solve_are_both(sys, cost, emp, lam, rel_tol=1e-6) -> SteadySolution:
    """Fixed-point solution cross-checked by the eigen route when ``A`` allows it."""
    fp = solve_are_fixed_point(sys, cost, emp, lam)
    try:
        ei = solve_are_eigen(sys, cost, lam, emp)
    except SingularA:
        return fp
    gap = np.linalg.norm(fp.P_ss - ei.P_ss)
    if gap > rel_tol * (1.0 + np.linalg.norm(fp.P_ss)):
        raise NumericalError(f"fixed-point and eigen ARE solutions differ by {gap:.3e}")
    return SteadySolution(**{**fp.__dict__, "method": "Both"})


def steady_worst_case_affine(sol: SteadySolution, sys: LinearSystem, emp: EmpiricalDistribution):
    """``(G, C)`` with worst-case atoms ``G x + C[i]``."""
    return _worst_case_affine(sol.P_ss, sol.r_ss, sol.K_ss, sol.L_ss, sys, emp, sol.lam, None)


def steady_worst_case_distribution(x, sol: SteadySolution, sys: LinearSystem,
                                   emp: EmpiricalDistribution) -> DiscreteDistribution:
    G, C = steady_worst_case_affine(sol, sys, emp)
    return DiscreteDistribution.uniform(C + G @ np.asarray(x, dtype=float))


def bellman_residual(sol: SteadySolution, sys: LinearSystem, cost: CostSpec,
                     emp: EmpiricalDistribution, lam: float, xs) -> float:
    """Largest ``|rho + h(x) - stage value(x)|`` over the test states.

    The stage value is evaluated directly from the closed-form inner
    solutions: ``x'Qx + u'Ru + mean_i[h(Ax + Bu + Xi w_i) - lam ||w_i - hat w_i||^2]``.
    """
    if lam != sol.lam:
        sol = SteadySolution(**{**sol.__dict__, "lam": float(lam)})
    G, C = steady_worst_case_affine(sol, sys, emp)
    worst = 0.0
    for x in np.atleast_2d(np.asarray(xs, dtype=float)):
        u = sol.K_ss @ x + sol.L_ss
        W = C + G @ x
        nxt = (sys.A @ x + sys.B @ u)[None, :] + W @ sys.Xi.T
        h_next = np.einsum("ij,jk,ik->i", nxt, sol.P_ss, nxt) + 2.0 * nxt @ sol.r_ss
        pen = lam * np.sum((W - emp.support) ** 2, axis=1)
        stage = x @ cost.Q @ x + u @ cost.R @ u + np.mean(h_next - pen)
        worst = max(worst, abs(sol.rho + sol.h(x) - stage))
    return worst


def stability_certificates(sol: SteadySolution, sys: LinearSystem) -> StabilityReport:
    n = sys.n
    I = np.eye(n)
    P, Phi = sol.P_ss, sol.Phi
    Abar = np.linalg.solve(I + Phi @ P, sys.A)
    shift = Phi @ np.linalg.solve(I + P @ Phi - sys.A.T, P)
    limit = np.linalg.solve(I - Abar, (I - shift) @ sys.Xi @ sol.wbar)
    return StabilityReport(sol.closed_loop_spectral_radius,
                           float(np.max(np.abs(np.linalg.eigvals(Abar)))), limit)


def mean_state_map(sol: SteadySolution, sys: LinearSystem, emp: EmpiricalDistribution):
    """``(F, f)`` with ``E[x+] = F E[x] + f`` under the saddle pair."""
    G, C = steady_worst_case_affine(sol, sys, emp)
    F = sys.A + sys.B @ sol.K_ss + sys.Xi @ G
    f = sys.B @ sol.L_ss + sys.Xi @ C.mean(axis=0)
    return F, f


def _level_ok(sys, cost, emp, lam):
    try:
        sol = solve_are_fixed_point(sys, cost, emp, lam, tol=1e-10, check=False)
    except (PenaltyTooSmall, NumericalError):
        return False
    return sol.penalty_margin > 0 and sol.closed_loop_spectral_radius < 1.0


def hinf_attenuation_level(sys: LinearSystem, cost: CostSpec, tol: float = 1e-6,
                           lam_lo: Optional[float] = None, lam_max: float = 1e12) -> float:
    """Smallest penalty (to within ``tol``) for which the steady problem is solvable.

    The returned value always passes the predicate; ``value - tol`` fails
    unless the value is the lower search limit.
    """
    emp = _zero_emp(sys)
    lo = tol if lam_lo is None else lam_lo
    if _level_ok(sys, cost, emp, lo):
        return lo
    hi = max(1.0, 2.0 * lo)
    while not _level_ok(sys, cost, emp, hi):
        lo = hi
        hi *= 2.0
        if hi > lam_max:
            raise NoFiniteLevel(f"no penalty up to {lam_max:.3g} gives a stabilizing solution")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _level_ok(sys, cost, emp, mid):
            hi = mid
        else:
            lo = mid
    return hi


def lqg_steady(sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution):
    """Risk-neutral steady solution ``(P, r, rho, K, L)`` under the empirical distribution.

    ``P`` comes from scipy's DARE solver; ``r`` and ``rho`` from the LQG
    recursion written in the ``R + B'PB`` form.
    """
    A, B = sys.A, sys.B
    P = linalg.solve_discrete_are(A, B, cost.Q, cost.R)
    P = 0.5 * (P + P.T)
    S = cost.R + B.T @ P @ B
    N_ = A.T @ (np.eye(sys.n) - P @ B @ np.linalg.solve(S, B.T))
    v = P @ sys.Xi @ emp.mean
    r = np.linalg.solve(np.eye(sys.n) - N_, N_ @ v)
    vp, pol = lqg_riccati_step(ValueParams(P, r, 0.0), sys, cost, emp)
    return P, r, vp.z, pol.K, pol.L
