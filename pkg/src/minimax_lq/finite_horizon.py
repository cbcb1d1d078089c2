"""Backward Riccati recursion for the Wasserstein-penalized minimax LQ problem.

The value function at every stage is quadratic,
``V_t(x) = x' P_t x + 2 r_t' x + z_t``, and the optimal control is affine,
``u = K_t x + L_t``. The adversary's best response places one atom per
empirical sample; see :func:`worst_case_distribution`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, PenaltyTooSmall, SingularMatrix
from .model import (AffinePolicy, CostSpec, DiscreteDistribution, EmpiricalDistribution,
                    LinearSystem, require_valid)

TOL_PD = 1e-9
MAX_COND = 1e12


@dataclass(frozen=True)
class ValueParams:
    P: np.ndarray
    r: np.ndarray
    z: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x + 2.0 * self.r @ x + self.z)

    @classmethod
    def terminal(cls, cost: CostSpec) -> "ValueParams":
        return cls(np.array(cost.Qf), np.zeros(cost.n), 0.0)


@dataclass(frozen=True)
class FiniteSolution:
    """Per-stage value coefficients and policies of a ``T``-stage problem.

    Arrays are indexed by stage: ``P[t]``, ``r[t]``, ``z[t]`` for
    ``t = 0..T`` and ``K[t]``, ``L[t]`` for ``t = 0..T-1``.
    ``margins[t-1]`` is ``min eig(lam*I - Xi' P_t Xi)`` for ``t = 1..T``.
    """

    P: np.ndarray
    r: np.ndarray
    z: np.ndarray
    K: np.ndarray
    L: np.ndarray
    lam: float
    margins: np.ndarray
    emps: tuple

    @property
    def T(self) -> int:
        return self.K.shape[0]

    @property
    def assumption_margin(self) -> float:
        return float(self.margins.min())

    def value_params(self, t: int) -> ValueParams:
        return ValueParams(self.P[t], self.r[t], float(self.z[t]))

    def value(self, x, t: int = 0) -> float:
        return self.value_params(t)(x)

    def policy(self, t: int) -> AffinePolicy:
        return AffinePolicy(self.K[t], self.L[t])


def _r_inv(cost: CostSpec, M):
    """``R^{-1} M`` via Cholesky."""
    return linalg.cho_solve(linalg.cho_factor(cost.R), M)


def penalty_matrix(sys: LinearSystem, cost: CostSpec, lam: float) -> np.ndarray:
    """``Phi = B R^{-1} B' - Xi Xi' / lam`` (``lam = inf`` drops the second term)."""
    Phi = sys.B @ _r_inv(cost, sys.B.T)
    if np.isfinite(lam):
        Phi = Phi - sys.Xi @ sys.Xi.T / lam
    return 0.5 * (Phi + Phi.T)


def penalty_margin(P, Xi, lam) -> float:
    """``min eig(lam*I - Xi' P Xi)``."""
    XPX = Xi.T @ P @ Xi
    return float(lam - np.linalg.eigvalsh(0.5 * (XPX + XPX.T))[-1])


def _check_margin(P, Xi, lam, stage):
    margin = penalty_margin(P, Xi, lam)
    if not margin > TOL_PD * (1.0 + lam):
        raise PenaltyTooSmall(stage, margin, lam)
    return margin


def _solve(M, rhs):
    if np.linalg.cond(M) > MAX_COND:
        raise SingularMatrix(f"I + P Phi is numerically singular (cond={np.linalg.cond(M):.3e})")
    return np.linalg.solve(M, rhs)


def _step(P, r, z, sys, cost, Phi, wbar, Sigma, lam):
    n, k = sys.n, sys.k
    A, B, Xi = sys.A, sys.B, sys.Xi
    M = np.eye(n) + P @ Phi
    S = _solve(M, np.column_stack([P @ A, P @ Xi @ wbar + r, r]))
    MPA, Mg, Mr = S[:, :n], S[:, n], S[:, n + 1]

    P_new = cost.Q + A.T @ MPA
    P_new = 0.5 * (P_new + P_new.T)
    r_new = A.T @ Mg

    XPX = Xi.T @ P @ Xi
    xw = Xi @ wbar
    v = P @ xw
    tr = np.trace(np.linalg.solve(np.eye(k) - XPX / lam, XPX @ Sigma))
    mean_term = xw @ (np.linalg.solve(M, v) - np.linalg.solve(np.eye(n) - P @ Xi @ Xi.T / lam, v))
    lin_term = (2.0 * xw - Phi @ r) @ Mr
    z_new = z + tr + mean_term + lin_term

    BT = B.T
    K = -_r_inv(cost, BT @ MPA)
    L = -_r_inv(cost, BT @ Mg)
    return P_new, r_new, float(z_new), K, L


def riccati_step(nxt: ValueParams, sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution,
                 lam: float, stage=None):
    """One backward step of the penalized recursion.

    Returns the stage value coefficients and the affine minimax policy.
    Raises :class:`PenaltyTooSmall` unless ``lam*I - Xi' P_next Xi`` is
    positive definite (with margin ``TOL_PD * (1 + lam)``).
    """
    if emp.k != sys.k:
        raise DimensionMismatch(f"samples live in R^{emp.k}, Xi has {sys.k} columns")
    P = np.asarray(nxt.P, dtype=float)
    _check_margin(P, sys.Xi, lam, stage)
    Phi = penalty_matrix(sys, cost, lam)
    P_new, r_new, z_new, K, L = _step(P, np.asarray(nxt.r, dtype=float), nxt.z, sys, cost, Phi,
                                      emp.mean, emp.second_moment, lam)
    return ValueParams(P_new, r_new, z_new), AffinePolicy(K, L)


def lqg_riccati_step(nxt: ValueParams, sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution):
    """Standard LQG backward step, written in the ``R + B'PB`` form.

    Kept algebraically separate from :func:`riccati_step` so each can check
    the other in the large-penalty limit.
    """
    A, B, Xi = sys.A, sys.B, sys.Xi
    P, r, z = np.asarray(nxt.P, dtype=float), np.asarray(nxt.r, dtype=float), nxt.z
    S = cost.R + B.T @ P @ B
    S = 0.5 * (S + S.T)
    if np.linalg.cond(S) > MAX_COND:
        raise SingularMatrix("R + B'PB is numerically singular")
    fac = linalg.cho_factor(S)
    v = P @ Xi @ emp.mean
    g = v + r
    K = -linalg.cho_solve(fac, B.T @ P @ A)
    L = -linalg.cho_solve(fac, B.T @ g)
    P_new = cost.Q + A.T @ P @ A + A.T @ P @ B @ K
    P_new = 0.5 * (P_new + P_new.T)
    r_new = A.T @ (g + P @ B @ L)
    xw = Xi @ emp.mean
    y = r - P @ B @ linalg.cho_solve(fac, B.T @ r)
    z_new = (z + np.trace(Xi.T @ P @ Xi @ emp.second_moment)
             - v @ B @ linalg.cho_solve(fac, B.T @ v)
             + 2.0 * xw @ y - r @ B @ linalg.cho_solve(fac, B.T @ r))
    return ValueParams(P_new, r_new, float(z_new)), AffinePolicy(K, L)


def _stage_emps(emp_per_stage, T):
    if isinstance(emp_per_stage, EmpiricalDistribution):
        return (emp_per_stage,) * T
    emps = tuple(emp_per_stage)
    if len(emps) == 1:
        return emps * T
    if len(emps) != T:
        raise DimensionMismatch(f"{len(emps)} empirical distributions for horizon {T}")
    return emps


def solve_finite(sys: LinearSystem, cost: CostSpec,
                 emp_per_stage: Union[EmpiricalDistribution, Sequence[EmpiricalDistribution]],
                 lam: float, horizon=None) -> FiniteSolution:
    """Full backward pass from ``P_T = Qf``, ``r_T = 0``, ``z_T = 0``.

    The horizon is taken from ``horizon``, then ``cost.horizon``, then the
    length of ``emp_per_stage``. A single distribution is reused at every
    stage (i.i.d. disturbances).
    """
    T = horizon or cost.horizon
    if T is None:
        if isinstance(emp_per_stage, EmpiricalDistribution):
            raise ValueError("finite horizon required")
        T = len(emp_per_stage)
    emps = _stage_emps(emp_per_stage, T)
    require_valid(sys, cost, emps[0])
    n, m = sys.n, sys.m
    P = np.empty((T + 1, n, n))
    r = np.empty((T + 1, n))
    z = np.empty(T + 1)
    K = np.empty((T, m, n))
    L = np.empty((T, m))
    margins = np.empty(T)
    P[T], r[T], z[T] = cost.Qf, 0.0, 0.0
    Phi = penalty_matrix(sys, cost, lam)
    for t in range(T - 1, -1, -1):
        emp = emps[t]
        if emp.k != sys.k:
            raise DimensionMismatch(f"stage {t}: samples in R^{emp.k}, Xi has {sys.k} columns")
        margins[t] = _check_margin(P[t + 1], sys.Xi, lam, t + 1)
        P[t], r[t], z[t], K[t], L[t] = _step(P[t + 1], r[t + 1], z[t + 1], sys, cost, Phi,
                                             emp.mean, emp.second_moment, lam)
    for a in (P, r, z, K, L, margins):
        a.flags.writeable = False
    return FiniteSolution(P, r, z, K, L, float(lam), margins, emps)


def solve_lqg_finite(sys: LinearSystem, cost: CostSpec, emp_per_stage, horizon=None) -> FiniteSolution:
    """Risk-neutral baseline: the LQG recursion under the empirical distribution."""
    T = horizon or cost.horizon
    if T is None:
        T = len(emp_per_stage)
    emps = _stage_emps(emp_per_stage, T)
    n, m = sys.n, sys.m
    P = np.empty((T + 1, n, n))
    r = np.empty((T + 1, n))
    z = np.empty(T + 1)
    K = np.empty((T, m, n))
    L = np.empty((T, m))
    P[T], r[T], z[T] = cost.Qf, 0.0, 0.0
    for t in range(T - 1, -1, -1):
        vp, pol = lqg_riccati_step(ValueParams(P[t + 1], r[t + 1], z[t + 1]), sys, cost, emps[t])
        P[t], r[t], z[t], K[t], L[t] = vp.P, vp.r, vp.z, pol.K, pol.L
    return FiniteSolution(P, r, z, K, L, float("inf"), np.full(T, np.inf), emps)


def worst_case_affine(t: int, sol: FiniteSolution, sys: LinearSystem, emp: EmpiricalDistribution):
    """Gain ``G`` (k x n) and offsets ``C`` (N x k) with atoms ``w_i(x) = G x + C[i]``."""
    if not 0 <= t < sol.T:
        raise IndexError(f"stage {t} outside 0..{sol.T - 1}")
    return _worst_case_affine(sol.P[t + 1], sol.r[t + 1], sol.K[t], sol.L[t], sys, emp, sol.lam, t + 1)


def _worst_case_affine(P, r, K, L, sys, emp, lam, stage):
    _check_margin(P, sys.Xi, lam, stage)
    Xi, B = sys.Xi, sys.B
    H = lam * np.eye(sys.k) - Xi.T @ P @ Xi
    XP = Xi.T @ P
    G = np.linalg.solve(H, XP @ (sys.A + B @ K))
    base = XP @ B @ L + Xi.T @ r
    C = np.linalg.solve(H, (base[:, None] + lam * emp.support.T)).T
    return G, C


def worst_case_distribution(t: int, x, sol: FiniteSolution, sys: LinearSystem,
                            emp: EmpiricalDistribution) -> DiscreteDistribution:
    """Adversary's optimal distribution at stage ``t`` and state ``x``: uniform on N atoms."""
    G, C = worst_case_affine(t, sol, sys, emp)
    return DiscreteDistribution.uniform(C + G @ np.asarray(x, dtype=float))


def hinf_worst_disturbance(t: int, x, sol: FiniteSolution, sys: LinearSystem) -> np.ndarray:
    """Pointwise H-infinity worst disturbance ``(lam I - Xi'P Xi)^{-1} Xi'P (A+BK_t) x``.

    Worst-case atoms equal this vector plus the offsets returned by
    :func:`worst_case_affine`.
    """
    if not 0 <= t < sol.T:
        raise IndexError(f"stage {t} outside 0..{sol.T - 1}")
    P = sol.P[t + 1]
    _check_margin(P, sys.Xi, sol.lam, t + 1)
    Xi = sys.Xi
    H = sol.lam * np.eye(sys.k) - Xi.T @ P @ Xi
    return np.linalg.solve(H, Xi.T @ P @ (sys.A + sys.B @ sol.K[t]) @ np.asarray(x, dtype=float))
