"""Problem data types and exact cost evaluators.

All containers are frozen dataclasses over read-only numpy arrays, so they can
be shared freely between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AssumptionViolated, DimensionMismatch

TOL_SYM = 1e-9


def _frozen(a, ndim=2, name="matrix"):
    arr = np.array(a, dtype=float)
    if ndim == 2:
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    elif ndim == 1:
        arr = np.atleast_1d(arr)
        if arr.ndim != 1:
            raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.flags.writeable = False
    return arr


def _asymmetry(M):
    return float(np.linalg.norm(M - M.T)) / max(1.0, float(np.linalg.norm(M)))


def _symmetrized(M, name):
    M = np.array(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    asym = _asymmetry(M)
    return _frozen(0.5 * (M + M.T), name=name), asym


@dataclass(frozen=True)
class LinearSystem:
    """Plant ``x+ = A x + B u + Xi w``."""

    A: np.ndarray
    B: np.ndarray
    Xi: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, name="A")
        B = _frozen(self.B, name="B")
        Xi = _frozen(self.Xi, name="Xi")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, expected {n}")
        if Xi.shape[0] != n:
            raise DimensionMismatch(f"Xi has {Xi.shape[0]} rows, expected {n}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Xi", Xi)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def k(self) -> int:
        return self.Xi.shape[1]


@dataclass(frozen=True)
class CostSpec:
    """Quadratic weights, horizon and (optionally) a default penalty.

    ``horizon=None`` means the infinite-horizon average-cost setting.
    ``Qf`` defaults to ``Q``. Inputs are symmetrized on construction; the
    pre-symmetrization asymmetry is kept for :func:`validate_problem`.
    """

    Q: np.ndarray
    R: np.ndarray
    Qf: Optional[np.ndarray] = None
    horizon: Optional[int] = None
    penalty: Optional[float] = None
    _asym: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        Q, aq = _symmetrized(self.Q, "Q")
        R, ar = _symmetrized(self.R, "R")
        Qf, af = _symmetrized(Q if self.Qf is None else self.Qf, "Qf")
        if Qf.shape != Q.shape:
            raise DimensionMismatch(f"Qf shape {Qf.shape} differs from Q {Q.shape}")
        if self.horizon is not None:
            if int(self.horizon) != self.horizon or self.horizon < 1:
                raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
            object.__setattr__(self, "horizon", int(self.horizon))
        if self.penalty is not None and self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Qf", Qf)
        object.__setattr__(self, "_asym", {"Q": aq, "R": ar, "Qf": af})

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Uniform distribution on ``N`` sample points in ``R^k``.

    ``second_moment`` is the raw moment ``E[w w']``, not the covariance.
    """

    support: np.ndarray
    mean: np.ndarray = field(init=False)
    second_moment: np.ndarray = field(init=False)

    def __post_init__(self):
        S = np.array(self.support, dtype=float)
        if S.ndim == 1:
            S = S.reshape(-1, 1)
        if S.ndim != 2 or S.shape[0] < 1:
            raise DimensionMismatch(f"support must be an (N, k) array, got shape {S.shape}")
        S = _frozen(S, name="support")
        mean = S.mean(axis=0)
        second = S.T @ S / S.shape[0]
        mean.flags.writeable = False
        second.flags.writeable = False
        object.__setattr__(self, "support", S)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "second_moment", second)

    @property
    def N(self) -> int:
        return self.support.shape[0]

    @property
    def k(self) -> int:
        return self.support.shape[1]

    def as_discrete(self) -> "DiscreteDistribution":
        return DiscreteDistribution(self.support, np.full(self.N, 1.0 / self.N))


@dataclass(frozen=True)
class DiscreteDistribution:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        S = np.array(self.support, dtype=float)
        if S.ndim == 1:
            S = S.reshape(-1, 1)
        S = _frozen(S, name="support")
        w = _frozen(self.weights, ndim=1, name="weights")
        if w.shape[0] != S.shape[0]:
            raise DimensionMismatch(f"{w.shape[0]} weights for {S.shape[0]} support points")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "support", S)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, support) -> "DiscreteDistribution":
        S = np.atleast_2d(np.asarray(support, dtype=float))
        return cls(S, np.full(S.shape[0], 1.0 / S.shape[0]))

    @property
    def k(self) -> int:
        return self.support.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.support


@dataclass(frozen=True)
class AffinePolicy:
    """``u = K x + L``."""

    K: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        K = _frozen(self.K, name="K")
        L = _frozen(self.L, ndim=1, name="L")
        if L.shape[0] != K.shape[0]:
            raise DimensionMismatch(f"L has length {L.shape[0]}, K has {K.shape[0]} rows")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "L", L)

    def __call__(self, x):
        return self.K @ np.asarray(x, dtype=float) + self.L


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def __str__(self):
        return "ok" if self.ok else "; ".join(self.findings)


def _min_eig(M):
    return float(np.linalg.eigvalsh(M)[0])


def validate_problem(sys: LinearSystem, cost: CostSpec, emp: EmpiricalDistribution) -> ValidationReport:
    """Collect every consistency problem instead of raising on the first."""
    rep = ValidationReport()
    if cost.n != sys.n:
        rep.findings.append(f"dimension mismatch: Q is {cost.n}x{cost.n}, A is {sys.n}x{sys.n}")
    if cost.m != sys.m:
        rep.findings.append(f"dimension mismatch: R is {cost.m}x{cost.m}, B has {sys.m} columns")
    if emp.k != sys.k:
        rep.findings.append(f"dimension mismatch: Xi has {sys.k} columns, samples live in R^{emp.k}")
    if emp.N < 1:
        rep.findings.append("empirical distribution has no samples")
    for name in ("Q", "R", "Qf"):
        if cost._asym.get(name, 0.0) > TOL_SYM:
            rep.findings.append(f"{name} not symmetric (relative asymmetry {cost._asym[name]:.2e})")
    for name in ("Q", "Qf"):
        M = getattr(cost, name)
        lo = _min_eig(M)
        if lo < -TOL_SYM * max(1.0, np.linalg.norm(M)):
            rep.findings.append(f"{name} not PSD (min eigenvalue {lo:.3e})")
    lo = _min_eig(cost.R)
    if lo <= TOL_SYM * max(1.0, np.linalg.norm(cost.R)):
        rep.findings.append(f"R not PD (min eigenvalue {lo:.3e})")
    return rep


def require_valid(sys, cost, emp=None):
    """Raise :class:`AssumptionViolated` if ``validate_problem`` finds anything."""
    if emp is None:
        emp = EmpiricalDistribution(np.zeros((1, sys.k)))
    rep = validate_problem(sys, cost, emp)
    if not rep.ok:
        raise AssumptionViolated(str(rep))


def stage_cost(x, u, cost: CostSpec) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (cost.n,) or u.shape != (cost.m,):
        raise DimensionMismatch(
            f"expected x in R^{cost.n} and u in R^{cost.m}, got {x.shape} and {u.shape}"
        )
    return float(x @ cost.Q @ x + u @ cost.R @ u)


def terminal_cost(x, cost: CostSpec) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (cost.n,):
        raise DimensionMismatch(f"expected x in R^{cost.n}, got {x.shape}")
    return float(x @ cost.Qf @ x)


def penalized_stage_cost(x, u, mu: DiscreteDistribution, emp: EmpiricalDistribution, lam: float,
                         cost: CostSpec) -> float:
    """Stage cost minus ``lam * W2(mu, emp)**2``."""
    from .robustness import wasserstein2

    d = wasserstein2(mu, emp)
    return stage_cost(x, u, cost) - lam * d * d
