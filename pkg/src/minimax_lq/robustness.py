"""Wasserstein-2 distance, ambiguity-set membership and radius calculators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment, linprog

from . import kernels
from .errors import DimensionMismatch, InvalidRisk
from .model import DiscreteDistribution, EmpiricalDistribution

EXHAUSTIVE_MAX = 8
ASSIGNMENT_MAX = 64
MEMBERSHIP_TOL = 1e-12


def _as_discrete(mu) -> DiscreteDistribution:
    if isinstance(mu, EmpiricalDistribution):
        return mu.as_discrete()
    if isinstance(mu, DiscreteDistribution):
        return mu
    return DiscreteDistribution.uniform(mu)


def _sq_dists(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _is_uniform(d: DiscreteDistribution):
    w = d.weights
    return np.all(np.abs(w - 1.0 / w.size) <= 1e-12)


def assignment_cost(C, method="auto"):
    """Minimum of ``sum_i C[i, perm[i]]`` over permutations, summed with fsum.

    ``method`` is ``"exhaustive"``, ``"hungarian"`` or ``"auto"`` (exhaustive
    up to 8 points). Both methods report the cost of their permutation the
    same way, so equal permutations give bit-equal results.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if method == "auto":
        method = "exhaustive" if n <= EXHAUSTIVE_MAX else "hungarian"
    if method == "exhaustive":
        perm = kernels.best_assignment(C)
    elif method == "hungarian":
        _, perm = linear_sum_assignment(C)
    else:
        raise ValueError(f"unknown assignment method {method!r}")
    return math.fsum(C[i, perm[i]] for i in range(n)), np.asarray(perm)


def _transport_lp(C, a, b):
    M, N = C.shape
    A_eq = np.zeros((M + N, M * N))
    for i in range(M):
        A_eq[i, i * N:(i + 1) * N] = 1.0
    for j in range(N):
        A_eq[M + j, j::N] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return max(float(res.fun), 0.0)


def wasserstein2(mu, nu, method="auto") -> float:
    """Exact W2 between finitely supported distributions.

    Equal-size uniform measures reduce to an assignment problem. Uniform
    measures of different sizes are replicated to a common size when that
    stays at most 64 points; anything else is solved as a transport LP.
    """
    mu, nu = _as_discrete(mu), _as_discrete(nu)
    if mu.k != nu.k:
        raise DimensionMismatch(f"distributions live in R^{mu.k} and R^{nu.k}")
    M, N = mu.support.shape[0], nu.support.shape[0]
    if _is_uniform(mu) and _is_uniform(nu):
        size = math.lcm(M, N)
        if size <= ASSIGNMENT_MAX:
            X = np.repeat(mu.support, size // M, axis=0)
            Y = np.repeat(nu.support, size // N, axis=0)
            total, _ = assignment_cost(_sq_dists(X, Y), method)
            return math.sqrt(total / size)
    return math.sqrt(_transport_lp(_sq_dists(mu.support, nu.support), mu.weights, nu.weights))


def matching_distance(mu, emp) -> float:
    """``sqrt((1/N) sum ||w_i - hat w_i||^2)`` for the index-wise coupling (an upper bound on W2)."""
    X, Y = _as_discrete(mu).support, _as_discrete(emp).support
    if X.shape != Y.shape:
        raise DimensionMismatch(f"matching needs equal supports, got {X.shape} and {Y.shape}")
    return math.sqrt(math.fsum(np.sum((X - Y) ** 2, axis=1)) / X.shape[0])


def in_ambiguity_set(mu, emp, theta: float) -> bool:
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    return wasserstein2(mu, emp) <= theta + MEMBERSHIP_TOL


@dataclass(frozen=True)
class RadiusParams:
    """Inputs of the out-of-sample radius.

    ``c1`` and ``c2`` are concentration constants with no known values; the
    defaults of 1 are placeholders, not calibrated numbers.
    """

    N: int
    beta: float
    T: int = 1
    k: int = 1
    c1: float = 1.0
    c2: float = 1.0
    q: float = 4.0
    zeta: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise InvalidRisk(f"beta must lie in (0, 1), got {self.beta}")
        if self.N < 1 or self.T < 1 or self.k < 1:
            raise ValueError("N, T and k must be positive")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if self.q <= 2:
            raise ValueError("q must exceed 2")
        if self.zeta is not None and self.zeta <= 0:
            raise ValueError("zeta must be positive")


def concentration_level(p: RadiusParams) -> float:
    """``c = log(c1 / (1 - (1-beta)^(1/T))) / (N c2)``."""
    eps = -math.expm1(math.log1p(-p.beta) / p.T)
    c = math.log(p.c1 / eps) / (p.N * p.c2)
    if not c > 0:
        raise InvalidRisk(f"c = {c:.6g} is not positive; increase c1 or beta")
    return c


def _solve_k4(c):
    """Root ``s > 0`` of ``s / log(2 + 1/s) = sqrt(c)``."""
    target = math.sqrt(c)

    def f(s):
        return s / math.log(2.0 + 1.0 / s) - target

    lo, hi = 1e-300, 1.0
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


K4_LIMIT = 1.0 / math.log(3.0) ** 2


def radius_light_tail(p: RadiusParams) -> float:
    c = concentration_level(p)
    if c > 1.0:
        return c ** (1.0 / p.q)
    if p.k < 4:
        return c ** 0.25
    if p.k > 4:
        return c ** (1.0 / p.k)
    if c <= K4_LIMIT:
        return math.sqrt(_solve_k4(c))
    # between 1/log(3)^2 and 1 the smallest admissible squared radius is 1
    return 1.0


def radius_compact(p: RadiusParams) -> float:
    if p.zeta is None:
        raise ValueError("compact radius needs zeta")
    c = concentration_level(p)
    if p.k < 4:
        return c ** 0.25 * p.zeta
    if p.k > 4:
        return c ** (1.0 / p.k) * p.zeta
    return p.zeta * math.sqrt(_solve_k4(c))


def k4_residual(theta: float, c: float, zeta: float = 1.0) -> float:
    """Residual of the k = 4 radius equation."""
    s = theta * theta / (zeta * zeta)
    return abs(s / math.log(2.0 + 1.0 / s) - math.sqrt(c))


def radius_sensitivity(params: RadiusParams, Ns, compact=False):
    """Table of ``(N, theta)``; raises ``AssertionError`` if theta increases with N."""
    fn = radius_compact if compact else radius_light_tail
    rows = []
    for N in Ns:
        p = RadiusParams(int(N), params.beta, params.T, params.k, params.c1, params.c2, params.q, params.zeta)
        rows.append((int(N), fn(p)))
    ordered = sorted(rows)
    for (_, a), (_, b) in zip(ordered, ordered[1:]):
        if b > a * (1 + 1e-12):
            raise AssertionError("radius increased with N")
    return rows
