"""Closed-loop Monte-Carlo harness.

Every disturbance policy here is affine in the state,
``w_t = G_t x_t + c``, where the offset ``c`` is either a drawn sample or
one of ``N`` worst-case atoms picked uniformly at random. That covers the
true sampler, the empirical distribution, worst-case distributions and the
pointwise H-infinity disturbance, and lets one kernel run them all.

Randomness comes from a Philox generator keyed by ``(seed, run_index)``,
one stream per run, so results do not depend on batching or run order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import NonFiniteState
from .finite_horizon import FiniteSolution, worst_case_affine
from .infinite_horizon import SteadySolution, steady_worst_case_affine
from .model import AffinePolicy, CostSpec, EmpiricalDistribution, LinearSystem

CHUNK = 256
SETTLING_THRESHOLD = 0.03
# run index reserved for drawing scenario samples, so they never share a stream with a rollout
SAMPLE_STREAM = 2**64 - 1


def run_stream(seed: int, run: int) -> np.random.Generator:
    """Independent generator for one run: Philox keyed by ``(seed, run)``."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(run)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class DisturbancePolicy:
    """Base class. Subclasses fill ``gains`` and ``offsets``."""

    k: int
    emp: Optional[EmpiricalDistribution] = None

    def gains(self, T: int) -> np.ndarray:
        """``(T or 1, k, n)`` state feedback part; zeros by default."""
        raise NotImplementedError

    def offsets(self, T: int, rng: np.random.Generator) -> np.ndarray:
        """``(T, k)`` offsets for one run."""
        raise NotImplementedError

    def atoms(self, T: int):
        """``(T or 1, N, k)`` atom offsets for distribution-valued policies, else ``None``."""
        return None


@dataclass
class Sampler(DisturbancePolicy):
    """i.i.d. Gaussian ``N(mean, cov)`` draws, or draws from ``draw(rng, T)``."""

    mean: np.ndarray
    cov: Optional[np.ndarray] = None
    draw: Optional[object] = None
    n: int = 0

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.k = self.mean.size
        cov = np.zeros((self.k, self.k)) if self.cov is None else np.atleast_2d(np.asarray(self.cov, float))
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
        self._root = V * np.sqrt(np.clip(w, 0.0, None))

    def gains(self, T):
        return np.zeros((1, self.k, self.n))

    def offsets(self, T, rng):
        if self.draw is not None:
            return np.asarray(self.draw(rng, T), dtype=float).reshape(T, self.k)
        return self.mean + rng.standard_normal((T, self.k)) @ self._root.T

    def sample(self, rng, size):
        return self.mean + rng.standard_normal((size, self.k)) @ self._root.T


@dataclass
class FixedSequence(DisturbancePolicy):
    ws: np.ndarray
    n: int = 0

    def __post_init__(self):
        self.ws = np.atleast_2d(np.asarray(self.ws, dtype=float))
        self.k = self.ws.shape[1]

    def gains(self, T):
        return np.zeros((1, self.k, self.n))

    def offsets(self, T, rng):
        if self.ws.shape[0] < T:
            raise ValueError(f"sequence has {self.ws.shape[0]} entries, need {T}")
        return self.ws[:T]


@dataclass
class AtomPolicy(DisturbancePolicy):
    """Uniform over ``N`` atoms ``G_t x + C_t[i]``; one atom drawn per stage."""

    G: np.ndarray
    C: np.ndarray
    emp: Optional[EmpiricalDistribution] = None

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        if self.G.ndim == 2:
            self.G = self.G[None]
        if self.C.ndim == 2:
            self.C = self.C[None]
        self.k = self.C.shape[2]

    def gains(self, T):
        return self.G

    def offsets(self, T, rng):
        N = self.C.shape[1]
        idx = rng.integers(0, N, size=T)
        if self.C.shape[0] == 1:
            return self.C[0, idx]
        return self.C[np.arange(T), idx]

    def atoms(self, T):
        return self.C


def Empirical(emp: EmpiricalDistribution, n: int) -> AtomPolicy:
    return AtomPolicy(np.zeros((1, emp.k, n)), emp.support[None], emp)


def WorstCaseFinite(sol: FiniteSolution, sys: LinearSystem, emps=None) -> AtomPolicy:
    emps = sol.emps if emps is None else emps
    pairs = [worst_case_affine(t, sol, sys, emps[t]) for t in range(sol.T)]
    pol = AtomPolicy(np.stack([g for g, _ in pairs]), np.stack([c for _, c in pairs]), emps[0])
    pol.stage_emps = emps
    return pol


def WorstCaseSteady(sol: SteadySolution, sys: LinearSystem, emp: EmpiricalDistribution,
                    shift=None, gain_scale: float = 1.0) -> AtomPolicy:
    """Steady worst case; ``shift`` and ``gain_scale`` give perturbed variants."""
    G, C = steady_worst_case_affine(sol, sys, emp)
    if shift is not None:
        C = C + np.asarray(shift, dtype=float)
    return AtomPolicy(G * gain_scale, C, emp)


def HinfPointwise(sol, sys: LinearSystem) -> AtomPolicy:
    """Deterministic ``w = G_t x`` with the H-infinity gain of a finite or steady solution."""
    k = sys.k
    if isinstance(sol, SteadySolution):
        emp0 = EmpiricalDistribution(np.zeros((1, k)))
        G, _ = steady_worst_case_affine(sol, sys, emp0)
        return AtomPolicy(G, np.zeros((1, 1, k)))
    emp0 = EmpiricalDistribution(np.zeros((1, k)))
    Gs = np.stack([worst_case_affine(t, sol, sys, emp0)[0] for t in range(sol.T)])
    return AtomPolicy(Gs, np.zeros((sol.T, 1, k)))


@dataclass
class RolloutResult:
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    per_stage_costs: np.ndarray
    terminal_cost: float
    total_cost: float
    penalized_cost: float


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    std_error: float
    n_runs: int
    seed: int


def _policy_arrays(policy, T):
    if isinstance(policy, FiniteSolution):
        return np.asarray(policy.K)[:T], np.asarray(policy.L)[:T]
    if isinstance(policy, SteadySolution):
        return policy.K_ss[None], policy.L_ss[None]
    if isinstance(policy, AffinePolicy):
        return policy.K[None], policy.L[None]
    pols = list(policy)
    return np.stack([p.K for p in pols]), np.stack([p.L for p in pols])


def _penalty_terms(dist, T):
    """Per-stage ``(d_t, e_t)`` so that matching penalty = |g|^2 + 2 g.d_t + e_t with ``g = G_t x``."""
    C = dist.atoms(T)
    if C is None or dist.emp is None:
        return None
    emps = getattr(dist, "stage_emps", None)
    if emps is not None:
        S = np.stack([e.support for e in emps])
    else:
        S = dist.emp.support[None]
    D = C - S
    return D.mean(axis=1), np.mean(np.sum(D * D, axis=2), axis=1)


def simulate(sys: LinearSystem, policy, dist: DisturbancePolicy, x0, T: int, seed: int,
             runs: Sequence[int], cost: CostSpec, lam: Optional[float] = None, terminal=None):
    """Run the given run indices; returns a dict of per-run arrays.

    ``terminal`` is an optional callable ``x_T -> cost`` replacing
    ``x' Qf x`` (used for the bias-extended average cost).
    """
    K, L = _policy_arrays(policy, T)
    G = dist.gains(T)
    if G.shape[-1] != sys.n:
        G = np.zeros((G.shape[0], sys.k, sys.n))
    runs = list(runs)
    W = np.stack([dist.offsets(T, run_stream(seed, r)) for r in runs]) if runs else np.zeros((0, T, sys.k))
    states, inputs, dists, costs, diverged = kernels.rollout_batch(
        sys.A, sys.B, sys.Xi, K, L, G, W, np.asarray(x0, dtype=float), cost.Q, cost.R)
    bad = np.nonzero(diverged >= 0)[0]
    if bad.size:
        raise NonFiniteState(runs[bad[0]], int(diverged[bad[0]]))
    xT = states[:, T]
    if terminal is None:
        term = np.einsum("ri,ij,rj->r", xT, cost.Qf, xT)
    else:
        term = np.array([terminal(x) for x in xT])
    out = {"states": states, "inputs": inputs, "disturbances": dists, "stage_costs": costs, "terminal": term}
    pen = np.zeros((len(runs), T))
    terms = _penalty_terms(dist, T) if lam is not None else None
    if terms is not None:
        d, e = terms
        g = np.einsum("tkn,rtn->rtk", G if G.shape[0] == T else np.broadcast_to(G, (T,) + G.shape[1:]),
                      states[:, :T])
        d = np.broadcast_to(d, (T, sys.k))
        e = np.broadcast_to(e, (T,))
        pen = lam * (np.sum(g * g, axis=2) + 2.0 * np.einsum("rtk,tk->rt", g, d) + e)
    out["penalty"] = pen
    return out


def rollout(sys: LinearSystem, policy, dist: DisturbancePolicy, x0, T: int, seed: int,
            cost: CostSpec, lam: Optional[float] = None, run_index: int = 0) -> RolloutResult:
    out = simulate(sys, policy, dist, x0, T, seed, [run_index], cost, lam)
    stage = out["stage_costs"][0]
    total = math.fsum(stage) + float(out["terminal"][0])
    return RolloutResult(out["states"][0], out["inputs"][0], out["disturbances"][0], stage,
                         float(out["terminal"][0]), total, total - math.fsum(out["penalty"][0]))


def _summarize(values, n_runs, seed):
    values = np.asarray(values, dtype=float)
    mean = math.fsum(values) / n_runs
    if n_runs < 2:
        return MonteCarloEstimate(mean, 0.0, n_runs, seed)
    var = math.fsum((values - mean) ** 2) / (n_runs - 1)
    return MonteCarloEstimate(mean, math.sqrt(var / n_runs), n_runs, seed)


def per_run_costs(sys, policy, dist, x0, T, n_runs, seed, cost, lam=None, penalized=False,
                  terminal=None, chunk=CHUNK):
    """``(1/T) * cost`` of each run (penalized and with a custom terminal term if asked)."""
    vals = np.empty(n_runs)
    for start in range(0, n_runs, chunk):
        runs = range(start, min(n_runs, start + chunk))
        out = simulate(sys, policy, dist, x0, T, seed, runs, cost, lam if penalized else None, terminal)
        total = out["stage_costs"].sum(axis=1) + out["terminal"]
        if penalized:
            total = total - out["penalty"].sum(axis=1)
        vals[start:start + len(runs)] = total / T
    return vals


def estimate_cost(sys: LinearSystem, policy, dist: DisturbancePolicy, x0, T: int, n_runs: int,
                  seed: int, cost: CostSpec, lam: Optional[float] = None, penalized: bool = False,
                  terminal=None) -> MonteCarloEstimate:
    """Mean and standard error of ``(1/T) * total cost`` over independent runs.

    With ``n_runs == 1`` the standard error is reported as 0.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    vals = per_run_costs(sys, policy, dist, x0, T, n_runs, seed, cost, lam, penalized, terminal)
    return _summarize(vals, n_runs, seed)


def expected_cost_affine(sys: LinearSystem, policy, cost: CostSpec, mean, second_moment, x0, T: int) -> float:
    """Exact ``E[C_T]`` for an affine policy under i.i.d. disturbances.

    Only the first two moments of ``w`` matter, so the expectation follows
    from propagating ``E[x]`` and ``E[x x']``.
    """
    K, L = _policy_arrays(policy, T)
    A, B, Xi = sys.A, sys.B, sys.Xi
    mu = np.asarray(mean, dtype=float)
    S = np.asarray(second_moment, dtype=float)
    m = np.asarray(x0, dtype=float).copy()
    X = np.outer(m, m)
    total = []
    for t in range(T):
        Kt = K[t if K.shape[0] > 1 else 0]
        Lt = L[t if L.shape[0] > 1 else 0]
        total.append(np.trace(cost.Q @ X) + np.trace(Kt.T @ cost.R @ Kt @ X)
                     + 2.0 * Lt @ cost.R @ Kt @ m + Lt @ cost.R @ Lt)
        F = A + B @ Kt
        c = B @ Lt
        Fm_c = F @ m + c
        xm = Xi @ mu
        X = (F @ X @ F.T + np.outer(F @ m, c) + np.outer(c, F @ m) + np.outer(c, c)
             + np.outer(Fm_c, xm) + np.outer(xm, Fm_c) + Xi @ S @ Xi.T)
        X = 0.5 * (X + X.T)
        m = Fm_c + xm
    total.append(np.trace(cost.Qf @ X))
    return math.fsum(total)


@dataclass
class ReliabilityResult:
    reliability: float
    n_trials: int
    passes: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)


def estimate_reliability(sys: LinearSystem, cost: CostSpec, truth: Sampler, N: int, theta: Optional[float],
                         beta: Optional[float], T: int, n_trials: int, seed: int, x0,
                         tol: float = 1e-6, detail: bool = False):
    """Fraction of sample draws whose tuned policy meets its guaranteed-cost bound.

    Each trial draws ``N`` samples on stream ``(seed, trial)``, re-tunes
    ``lambda*`` for that sample set, and compares the exact out-of-sample
    cost ``(1/T) E[C_T]`` under the truth against ``lambda* theta^2 + V``.
    ``theta=None`` takes the light-tail radius for ``beta``.
    """
    from .finite_horizon import solve_finite
    from .robustness import RadiusParams, radius_light_tail
    from .tuning import find_lambda_hat_finite, optimize_lambda_finite

    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    if theta is None:
        if beta is None:
            raise ValueError("need theta or beta")
        theta = radius_light_tail(RadiusParams(N, beta, T, sys.k))
    truth_S = np.outer(truth.mean, truth.mean) + truth._root @ truth._root.T
    # the threshold only involves the P recursion, which does not see the samples
    emp0 = EmpiricalDistribution(np.zeros((1, sys.k)))
    lam_hat = find_lambda_hat_finite(sys, cost, emp0, T, tol)
    res = ReliabilityResult(0.0, n_trials)
    for trial in range(n_trials):
        emp = EmpiricalDistribution(truth.sample(run_stream(seed, trial), N))
        tp = optimize_lambda_finite(sys, cost, emp, T, x0, theta, tol, lam_hat=lam_hat)
        sol = solve_finite(sys, cost, emp, tp.lambda_star, horizon=T)
        c = expected_cost_affine(sys, sol, cost, truth.mean, truth_S, x0, T) / T
        res.passes.append(bool(c <= tp.upper_bound))
        res.bounds.append(tp.upper_bound)
        res.costs.append(c)
        res.lambdas.append(tp.lambda_star)
    res.reliability = sum(res.passes) / n_trials
    return res if detail else res.reliability


def settling_time(states, components=None, threshold: float = SETTLING_THRESHOLD, dt: float = 1.0,
                  reference: Optional[float] = None) -> np.ndarray:
    """Per-component time after the last step with ``|x| >= threshold * reference``.

    ``states`` is a ``(T+1, n)`` trajectory, typically a mean trajectory.
    ``reference`` defaults to the largest initial deviation over the chosen
    components. A component still violating at the final step never settles
    and gets the horizon end ``T * dt`` (see :func:`never_settles`).
    """
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty trajectory")
    cols = list(range(X.shape[1])) if components is None else list(components)
    X = np.abs(X[:, cols])
    ref = float(X[0].max()) if reference is None else float(reference)
    limit = threshold * ref
    T = X.shape[0] - 1
    out = np.zeros(len(cols))
    for j in range(len(cols)):
        bad = np.nonzero(X[:, j] >= limit)[0] if ref > 0 else np.array([], dtype=int)
        if bad.size:
            out[j] = min(bad[-1] + 1, T) * dt
    return out


def never_settles(states, components=None, threshold: float = SETTLING_THRESHOLD,
                  reference: Optional[float] = None) -> np.ndarray:
    """Mask of components that still violate the band at the final step."""
    X = np.abs(np.atleast_2d(np.asarray(states, dtype=float).T).T)
    cols = list(range(X.shape[1])) if components is None else list(components)
    X = X[:, cols]
    ref = float(X[0].max()) if reference is None else float(reference)
    return (X[-1] >= threshold * ref) & (ref > 0)


def control_energy(inputs, window: int = 50) -> float:
    """Mean of ``||u_t||^2`` over the first ``window`` steps (averaged over runs if batched)."""
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 2:
        U = U[None]
    if window > U.shape[1]:
        raise ValueError(f"window {window} exceeds trajectory length {U.shape[1]}")
    return float(np.mean(np.sum(U[:, :window] ** 2, axis=2)))
