"""Penalty-parameter thresholds and the guaranteed-cost minimization over lambda."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (AssumptionError, BracketFailure, Lambda2Infinite, MonotonicityViolation,
                     NumericalError, PenaltyTooSmall)
from .finite_horizon import TOL_PD, penalty_matrix, solve_finite
from .infinite_horizon import _psd_sqrt, is_stabilizable, solve_are_fixed_point
from .model import CostSpec, EmpiricalDistribution, LinearSystem

LAMBDA_HI = 1e9
LAMBDA_MAX = 1e12
GOLDEN_MAX_ITER = 200
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LambdaProfile:
    lambda_hat: float
    lambda_hat1: float
    lambda_hat2: float
    lambda_hat_inf: float
    search_tol: float


@dataclass(frozen=True)
class TunedPenalty:
    lambda_star: float
    upper_bound: float
    theta: float
    evaluations: list = field(default_factory=list)
    monotone_tail: bool = False
    lambda_floor: float = 0.0


class _Audit:
    """Records predicate outcomes and rejects any non-monotone pattern."""

    def __init__(self, pred):
        self.pred = pred
        self.seen = []

    def __call__(self, lam):
        ok = bool(self.pred(lam))
        for other, res in self.seen:
            if (other < lam and res and not ok) or (other > lam and ok and not res):
                raise MonotonicityViolation(
                    f"predicate holds at {min(other, lam) if res else lam:.9g} "
                    f"but not at {max(other, lam):.9g}")
        self.seen.append((lam, ok))
        return ok


def bisect_threshold(pred: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    """Midpoint of a bracket ``[lo, hi]`` of width at most ``tol`` around the switch point.

    Requires ``pred(hi)`` true; if ``pred(lo)`` is already true, ``lo`` is
    returned. ``pred`` must be monotone (false then true); this is audited.
    """
    audit = pred if isinstance(pred, _Audit) else _Audit(pred)
    if audit(lo):
        return lo
    if not audit(hi):
        raise BracketFailure(f"predicate fails at the upper end {hi:.6g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if audit(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _finite_ok(sys, cost, emp, T):
    def pred(lam):
        try:
            solve_finite(sys, cost, emp, lam, horizon=T)
        except (PenaltyTooSmall, NumericalError):
            return False
        return True
    return pred


def find_lambda_hat_finite(sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution,
                           T: Optional[int] = None, tol: float = 1e-6,
                           lam_lo: Optional[float] = None, lam_hi: float = LAMBDA_HI) -> float:
    """Smallest penalty for which the ``T``-stage recursion stays well posed."""
    T = T or cost.horizon
    if T is None:
        raise ValueError("finite horizon required")
    return bisect_threshold(_finite_ok(sys, cost, emp, T), tol if lam_lo is None else lam_lo, lam_hi, tol)


def _lambda1_pred(sys, cost):
    def pred(lam):
        Phi = penalty_matrix(sys, cost, lam)
        if np.linalg.eigvalsh(Phi)[0] < -TOL_PD:
            return False
        return is_stabilizable(sys.A, _psd_sqrt(Phi))
    return pred


def _lambda2_pred(sys, cost, emp):
    def pred(lam):
        try:
            solve_are_fixed_point(sys, cost, emp, lam, tol=1e-10, check=False)
        except (PenaltyTooSmall, NumericalError):
            return False
        return True
    return pred


def find_lambda_profile_infinite(sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution,
                                 tol: float = 1e-6, T: Optional[int] = None) -> LambdaProfile:
    """Thresholds for the steady problem; ``lambda_hat`` is filled when a horizon is known."""
    lo = tol
    p1 = _Audit(_lambda1_pred(sys, cost))
    if p1(lo):
        l1 = lo
    else:
        hi = LAMBDA_MAX
        if not p1(hi):
            raise Lambda2Infinite("Phi never becomes PSD and stabilizing below 1e12")
        # descend by decades to a failing value, then bisect
        while hi / 10.0 > lo and p1(hi / 10.0):
            hi /= 10.0
        l1 = bisect_threshold(p1, max(lo, hi / 10.0), hi, tol)

    p2 = _Audit(_lambda2_pred(sys, cost, emp))
    if p2(lo):
        l2 = lo
    else:
        hi = 1.0
        while not p2(hi):
            hi *= 2.0
            if hi > LAMBDA_MAX:
                raise Lambda2Infinite("no penalty up to 1e12 keeps every Riccati iterate well posed")
        l2 = bisect_threshold(p2, max(lo, hi / 2.0) if hi > 1.0 else lo, hi, tol)

    T = T or cost.horizon
    lhat = find_lambda_hat_finite(sys, cost, emp, T, tol) if T else float("nan")
    return LambdaProfile(lhat, l1, l2, max(l1, l2), tol)


def golden_section(f, a, b, tol, max_iter=GOLDEN_MAX_ITER):
    """Minimize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(c)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _minimize_over_lambda(obj, floor, tol, cap=LAMBDA_HI):
    """Doubling bracket from ``floor`` then golden section.

    Returns ``(lambda_star, value, monotone_tail)``.
    """
    a = floor + tol
    fa = obj(a)
    step = max(tol, abs(a))
    grid = [(a, fa)]
    while True:
        lam = a + step
        if lam > cap:
            lam = cap
        fl = obj(lam)
        grid.append((lam, fl))
        prev = grid[-2][1]
        if fl > prev + 1e-12 * (1.0 + abs(prev)):
            break
        if lam >= cap:
            return lam, fl, True
        step *= 2.0
    left = grid[-3][0] if len(grid) >= 3 else a
    x, fx = golden_section(obj, left, grid[-1][0], tol)
    best = min([(fx, x)] + [(v, l) for l, v in grid])
    return best[1], best[0], False


def finite_objective(sys, cost, emp, T, x0, theta, record=None):
    x0 = np.asarray(x0, dtype=float)

    def obj(lam):
        try:
            sol = solve_finite(sys, cost, emp, lam, horizon=T)
        except (PenaltyTooSmall, NumericalError):
            if record is not None:
                record.append((lam, math.inf, math.nan))
            return math.inf
        v = lam * theta * theta + sol.value(x0, 0) / T
        if record is not None:
            record.append((lam, v, sol.assumption_margin))
        return v
    return obj


def optimize_lambda_finite(sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution,
                           T: Optional[int], x0, theta: float, tol: float = 1e-6,
                           lam_hat: Optional[float] = None) -> TunedPenalty:
    """Minimize ``lam*theta^2 + V(x0; lam)`` over ``lam > lam_hat`` (``V`` is per stage)."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    T = T or cost.horizon
    if lam_hat is None:
        lam_hat = find_lambda_hat_finite(sys, cost, emp, T, tol)
    evals = []
    obj = finite_objective(sys, cost, emp, T, x0, theta, evals)
    lam, val, tail = _minimize_over_lambda(obj, lam_hat + tol / 2, tol)
    return TunedPenalty(lam, val, theta, evals, tail, lam_hat)


def rho_of_lambda(sys, cost, emp, lam):
    """Steady average cost, or ``inf`` where the steady problem is not solvable."""
    try:
        return solve_are_fixed_point(sys, cost, emp, lam, check=False).rho
    except (PenaltyTooSmall, NumericalError, AssumptionError):
        return math.inf


def optimize_lambda_infinite(sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution,
                             theta: float, tol: float = 1e-6,
                             profile: Optional[LambdaProfile] = None) -> TunedPenalty:
    """Minimize ``lam*theta^2 + rho(lam)`` over ``lam > lambda_hat_inf``."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    profile = profile or find_lambda_profile_infinite(sys, cost, emp, tol)
    evals = []

    def obj(lam):
        sol = None
        try:
            sol = solve_are_fixed_point(sys, cost, emp, lam, check=False)
        except (PenaltyTooSmall, NumericalError):
            pass
        v = math.inf if sol is None else lam * theta * theta + sol.rho
        evals.append((lam, v, math.nan if sol is None else sol.penalty_margin))
        return v

    lam, val, tail = _minimize_over_lambda(obj, profile.lambda_hat_inf + tol / 2, tol)
    return TunedPenalty(lam, val, theta, evals, tail, profile.lambda_hat_inf)
