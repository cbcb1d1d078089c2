"""Linearized swing-equation model and the frequency-regulation demo.

State is ``(d_delta, d_omega)`` for ``n_gen`` machines with
``M d_delta'' + D d_delta' + L d_delta = d_P``; the disturbance enters
through the same channel as the control input.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import BadDataFile, SingularInertia
from .model import CostSpec, EmpiricalDistribution, LinearSystem

PADE_ORDER = 6
SCALE_THRESHOLD = 0.5
BUNDLED = "synthetic10.grid"


@dataclass(frozen=True)
class GridModel:
    """``M = 2H/omega_s`` and ``D`` are diagonal, ``L`` a Kron-reduced Laplacian."""

    H: np.ndarray
    D: np.ndarray
    L: np.ndarray
    omega_s: float = 2.0 * math.pi * 60.0
    dt: float = 0.1

    def __post_init__(self):
        H = np.atleast_1d(np.asarray(self.H, dtype=float))
        D = np.atleast_1d(np.asarray(self.D, dtype=float))
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        n = H.size
        if D.size != n or L.shape != (n, n):
            raise BadDataFile(f"inconsistent sizes: H {H.size}, D {D.size}, L {L.shape}")
        if np.any(H <= 0):
            raise SingularInertia("inertia constants must be positive")
        if np.any(D <= 0):
            raise BadDataFile("damping coefficients must be positive")
        scale = max(1.0, float(np.abs(L).max()))
        if np.abs(L - L.T).max() > 1e-9 * scale:
            raise BadDataFile("L is not symmetric")
        if np.abs(L.sum(axis=1)).max() > 1e-9 * scale:
            raise BadDataFile("L rows do not sum to zero")
        for name, val in (("H", H), ("D", D), ("L", L)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n_gen(self) -> int:
        return self.H.size

    @property
    def M(self) -> np.ndarray:
        return np.diag(2.0 * self.H / self.omega_s)


def build_state_space(grid: GridModel) -> LinearSystem:
    """Continuous-time ``A_c = [[0, I], [-M^-1 L, -M^-1 D]]``, ``B_c = Xi_c = [0; M^-1]``."""
    n = grid.n_gen
    minv = grid.omega_s / (2.0 * grid.H)
    if not np.all(np.isfinite(minv)):
        raise SingularInertia("inertia matrix is singular")
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -minv[:, None] * grid.L
    A[n:, n:] = -np.diag(minv * grid.D)
    B = np.zeros((2 * n, n))
    B[n:] = np.diag(minv)
    return LinearSystem(A, B, B)


def _pade_coefficients(q=PADE_ORDER):
    c = [1.0]
    for j in range(1, q + 1):
        c.append(c[-1] * (q - j + 1) / (j * (2 * q - j + 1)))
    return c


def expm(X) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a diagonal Pade(6, 6) approximant."""
    X = np.asarray(X, dtype=float)
    norm = np.abs(X).sum(axis=0).max() if X.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / SCALE_THRESHOLD)))) if norm > SCALE_THRESHOLD else 0
    Y = X / (2.0 ** s)
    c = _pade_coefficients()
    I = np.eye(X.shape[0])
    P = I
    num = c[0] * I
    den = c[0] * I
    for j in range(1, len(c)):
        P = P @ Y
        num = num + c[j] * P
        den = den + ((-1) ** j) * c[j] * P
    E = np.linalg.solve(den, num)
    for _ in range(s):
        E = E @ E
    return E


def zoh_discretize(A_c, B_c, dt: float):
    """Zero-order hold: upper blocks of ``exp([[A_c, B_c], [0, 0]] dt)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    A_c = np.asarray(A_c, dtype=float)
    B_c = np.asarray(B_c, dtype=float)
    n, m = B_c.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    E = expm(aug * dt)
    return E[:n, :n], E[:n, n:]


def discretize(grid: GridModel) -> LinearSystem:
    cont = build_state_space(grid)
    Ad, Bd = zoh_discretize(cont.A, cont.B, grid.dt)
    return LinearSystem(Ad, Bd, Bd)


def _content_lines(text):
    lines = []
    checksum = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("sha256"):
            parts = line.split()
            if len(parts) != 2:
                raise BadDataFile("malformed checksum line")
            checksum = parts[1].lower()
            continue
        lines.append(" ".join(line.split()))
    return lines, checksum


def data_checksum(lines) -> str:
    return hashlib.sha256("\n".join(lines).encode("ascii")).hexdigest()


def parse_grid(text: str) -> GridModel:
    """Parse the grid data format; see ``docs/grid_format.md``."""
    lines, checksum = _content_lines(text)
    if checksum is None:
        raise BadDataFile("missing sha256 line")
    if data_checksum(lines) != checksum:
        raise BadDataFile("checksum mismatch")
    fields = {}
    rows = []
    in_L = False
    try:
        for line in lines:
            key, *vals = line.split()
            if in_L:
                rows.append([float(v) for v in line.split()])
                continue
            if key == "L":
                in_L = True
            elif key in ("n_gen",):
                fields[key] = int(vals[0])
            elif key in ("omega_s", "dt"):
                fields[key] = float(vals[0])
            elif key in ("H", "D"):
                fields[key] = [float(v) for v in vals]
            else:
                raise BadDataFile(f"unknown key {key!r}")
        n = fields["n_gen"]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise BadDataFile(f"L must have {n} rows of {n} entries")
        if len(fields["H"]) != n or len(fields["D"]) != n:
            raise BadDataFile("H and D need n_gen entries")
        return GridModel(fields["H"], fields["D"], rows, fields.get("omega_s", 2.0 * math.pi * 60.0),
                         fields.get("dt", 0.1))
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, BadDataFile):
            raise
        raise BadDataFile(f"malformed grid file: {exc}") from exc


def format_grid(grid: GridModel, header: str = "") -> str:
    """Serialize a model, including its checksum line."""
    fmt = lambda v: repr(float(v))
    lines = [f"n_gen {grid.n_gen}", f"omega_s {fmt(grid.omega_s)}", f"dt {fmt(grid.dt)}",
             "H " + " ".join(fmt(v) for v in grid.H), "D " + " ".join(fmt(v) for v in grid.D), "L"]
    lines += [" ".join(fmt(v) for v in row) for row in grid.L]
    comments = "".join(f"# {h}\n" for h in header.splitlines()) if header else ""
    return comments + "\n".join(lines) + f"\nsha256 {data_checksum(lines)}\n"


def load_grid(path: Optional[Union[str, Path]] = None) -> GridModel:
    """Load a grid file, or the bundled synthetic 10-machine network when ``path`` is None."""
    if path is None:
        text = resources.files("minimax_lq").joinpath("data", BUNDLED).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise BadDataFile(f"cannot read {path}: {exc}") from exc
    return parse_grid(text)


@dataclass(frozen=True)
class DemoScenario:
    grid: GridModel
    sys: LinearSystem
    cost: CostSpec
    emp: EmpiricalDistribution
    x0: np.ndarray
    theta: float
    true_mean: np.ndarray
    true_cov: np.ndarray

    @property
    def speed_indices(self):
        n = self.grid.n_gen
        return list(range(n, 2 * n))


def demo_cost(n_gen: int, T: int = 150) -> CostSpec:
    """``x'Qx = 1/2 d_delta'(I - 11'/n) d_delta + 1/2 d_omega' d_omega``, ``R = I``."""
    n = n_gen
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = 0.5 * (np.eye(n) - np.ones((n, n)) / n)
    Q[n:, n:] = 0.5 * np.eye(n)
    return CostSpec(Q, np.eye(n), Q, horizon=T)


def demo_scenario(grid: Optional[GridModel] = None, theta: float = 0.5, N: int = 10, seed: int = 0,
                  T: int = 150, mean: float = 0.02, std: float = 0.1) -> DemoScenario:
    """Frequency-regulation experiment: N Gaussian samples, rotor speed of the last machine perturbed by 1."""
    from .simulator import run_stream

    grid = grid or load_grid()
    sys = discretize(grid)
    n = grid.n_gen
    true_mean = np.full(n, mean)
    true_cov = std * std * np.eye(n)
    rng = run_stream(seed, 0)
    samples = true_mean + std * rng.standard_normal((N, n))
    x0 = np.zeros(2 * n)
    x0[2 * n - 1] = 1.0
    return DemoScenario(grid, sys, demo_cost(n, T), EmpiricalDistribution(samples), x0, theta,
                        true_mean, true_cov)


@dataclass
class GridDemoResult:
    """Settling times (seconds) of the speed deviations under the minimax worst case.

    ``per_generator`` maps controller name to one settling time per machine,
    measured on the mean trajectory over all runs. Both controllers see the
    same disturbance streams. Components that never settle get the horizon end.
    """

    lambda_star: float
    upper_bound: float
    per_generator: dict
    horizon_end: float
    runs: int
    seed: int

    @property
    def averages(self) -> dict:
        return {name: float(np.mean(v)) for name, v in self.per_generator.items()}

    def paired_pvalue(self, better: str = "minimax", worse: str = "lqg") -> float:
        """One-sided paired t-test p-value for ``worse`` settling later than ``better``."""
        from scipy.stats import ttest_rel

        d = self.per_generator[worse] - self.per_generator[better]
        if np.all(d == d[0]):
            return 0.0 if d[0] > 0 else 1.0
        return float(ttest_rel(self.per_generator[worse], self.per_generator[better],
                               alternative="greater").pvalue)


def run_grid_demo(scenario: Optional[DemoScenario] = None, runs: int = 1000, seed: int = 0,
                  tol: float = 1e-6) -> GridDemoResult:
    """Tune the minimax controller, then run it and LQG against its worst-case distribution."""
    from .finite_horizon import solve_finite, solve_lqg_finite
    from .simulator import WorstCaseFinite, settling_time, simulate
    from .tuning import optimize_lambda_finite

    sc = scenario or demo_scenario()
    s, c, e = sc.sys, sc.cost, sc.emp
    T = c.horizon
    tp = optimize_lambda_finite(s, c, e, T, sc.x0, sc.theta, tol)
    mm = solve_finite(s, c, e, tp.lambda_star, horizon=T)
    lq = solve_lqg_finite(s, c, e, horizon=T)
    adversary = WorstCaseFinite(mm, s)
    per_gen = {}
    for name, pol in (("minimax", mm), ("lqg", lq)):
        states = simulate(s, pol, adversary, sc.x0, T, seed, range(runs), c)["states"]
        per_gen[name] = settling_time(states.mean(axis=0), sc.speed_indices, dt=sc.grid.dt)
    return GridDemoResult(tp.lambda_star, tp.upper_bound, per_gen, T * sc.grid.dt, runs, seed)
