"""Command-line front end.

Every subcommand reads an INI scenario (grammar in ``docs/scenario.md``),
applies command-line overrides, writes its artifacts into ``--out`` and a
``manifest.json`` recording what is needed to reproduce them. ``replay``
re-executes a manifest and checks that the outputs are byte-identical.

Exit codes: 0 success, 1 replay mismatch, 2 assumption violated,
3 numerical failure, 64 usage or scenario error, 65 unreadable data file.
"""

from __future__ import annotations

import argparse
import configparser
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, io, kernels
from .errors import (AssumptionError, BadDataFile, DimensionMismatch, InvalidRisk, NumericalError,
                     PenaltyTooSmall, ScenarioError, SingularA)
from .model import CostSpec, EmpiricalDistribution, LinearSystem

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ASSUMPTION = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64
EXIT_DATA = 65

DEFAULT_OUT = "minimax_lq_out"
DEFAULT_STEADY_STEPS = 1000
DEFAULT_RADIUS_N = (10, 20, 50, 100, 200, 500, 1000)
SECTIONS = {
    "system": {"A", "B", "Xi", "grid", "dt"},
    "cost": {"Q", "R", "Qf"},
    "samples": {"data", "mean", "cov", "std", "N", "seed"},
    "penalty": {"lambda", "theta", "beta", "c1", "c2", "q"},
    "run": {"horizon", "x0", "runs", "seed", "mode", "controller", "steps", "out"},
    "radius": {"N", "T", "k", "zeta"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ scenario

def parse_matrix(text: str, name: str = "matrix") -> np.ndarray:
    """``"1 0; 0 1"`` to a 2-D array (rows split on ``;``, entries on spaces or commas)."""
    rows = [r.replace(",", " ").split() for r in text.split(";")]
    rows = [r for r in rows if r]
    if not rows:
        raise ScenarioError(f"{name} is empty")
    if len({len(r) for r in rows}) != 1:
        raise ScenarioError(f"{name} has rows of unequal length")
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ScenarioError(f"{name}: {exc}") from exc


def parse_vector(text: str, name: str = "vector") -> np.ndarray:
    M = parse_matrix(text, name)
    if min(M.shape) != 1:
        raise ScenarioError(f"{name} must be a vector")
    return M.ravel()


def parse_list(text: Optional[str], cast=float, name="list") -> Optional[list]:
    if text is None:
        return None
    try:
        vals = [cast(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ScenarioError(f"{name}: {exc}") from exc
    if not vals:
        raise ScenarioError(f"{name} is empty")
    return vals


@dataclass
class Scenario:
    """A parsed scenario with command-line overrides applied.

    Exactly one system source (inline matrices or a grid file) and exactly
    one penalty mode (fixed ``lam`` or tuning with ``thetas``/``beta``).
    """

    sys: Optional[LinearSystem] = None
    cost: Optional[CostSpec] = None
    cost_raw: Optional[tuple] = None
    emp: Optional[EmpiricalDistribution] = None
    truth_mean: Optional[np.ndarray] = None
    truth_cov: Optional[np.ndarray] = None
    N: Optional[int] = None
    x0: Optional[np.ndarray] = None
    lam: Optional[float] = None
    thetas: Optional[list] = None
    betas: Optional[list] = None
    c1: float = 1.0
    c2: float = 1.0
    q: float = 4.0
    horizon: Optional[int] = None
    runs: int = 100
    seed: int = 0
    sample_seed: Optional[int] = None
    mode: str = "worst-case"
    controller: str = "minimax"
    steps: int = DEFAULT_STEADY_STEPS
    out: str = DEFAULT_OUT
    grid: object = None
    radius_N: list = field(default_factory=lambda: list(DEFAULT_RADIUS_N))
    radius_T: Optional[list] = None
    radius_k: Optional[int] = None
    zeta: Optional[float] = None
    text: str = ""
    path: Optional[str] = None

    def make_cost(self, horizon) -> CostSpec:
        Q, R, Qf = self.cost_raw
        return CostSpec(Q, R, Qf, horizon=horizon)

    @property
    def penalty_mode(self) -> str:
        return "fixed" if self.lam is not None else "tune"

    @property
    def k(self) -> int:
        if self.sys is not None:
            return self.sys.k
        return self.radius_k or 1

    def require_system(self):
        if self.sys is None or self.cost is None:
            raise ScenarioError("this command needs a [system] and a [cost] section")
        if self.emp is None:
            raise ScenarioError("this command needs a [samples] section")

    def require_penalty(self):
        if self.lam is None and not self.thetas and not self.betas:
            raise ScenarioError("no penalty: give lambda, theta or beta")


def _get(cp, sec, key, cast=str, default=None):
    if not cp.has_option(sec, key):
        return default
    raw = cp.get(sec, key).strip()
    try:
        return cast(raw)
    except ValueError as exc:
        raise ScenarioError(f"[{sec}] {key}: {exc}") from exc


def _horizon(v):
    if v is None or str(v).strip().lower() in ("inf", "infinite", "none"):
        return None
    h = int(v)
    if h < 1:
        raise ValueError("horizon must be positive")
    return h


def load_scenario(path: Optional[str]) -> Scenario:
    """Parse a scenario file; ``None`` gives an empty scenario for commands that allow it."""
    sc = Scenario()
    if path is None:
        return sc
    try:
        sc.text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    sc.path = str(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(sc.text, source=str(path))
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ScenarioError(f"unknown section [{sec}]")
        extra = set(cp.options(sec)) - SECTIONS[sec]
        if extra:
            raise ScenarioError(f"unknown key(s) in [{sec}]: {', '.join(sorted(extra))}")

    # run first: horizon feeds into the cost
    sc.horizon = _get(cp, "run", "horizon", _horizon)
    sc.runs = _get(cp, "run", "runs", int, sc.runs)
    sc.seed = _get(cp, "run", "seed", int, sc.seed)
    sc.mode = _get(cp, "run", "mode", str, sc.mode)
    sc.controller = _get(cp, "run", "controller", str, sc.controller)
    sc.steps = _get(cp, "run", "steps", int, sc.steps)
    sc.out = _get(cp, "run", "out", str, sc.out)
    x0 = _get(cp, "run", "x0", str)

    if cp.has_section("system"):
        _load_system(cp, sc)
    if cp.has_section("cost"):
        try:
            Q = parse_matrix(cp.get("cost", "Q"), "Q")
            R = parse_matrix(cp.get("cost", "R"), "R")
        except configparser.NoOptionError as exc:
            raise ScenarioError(str(exc)) from exc
        Qf = _get(cp, "cost", "Qf", lambda s: parse_matrix(s, "Qf"))
        sc.cost_raw = (Q, R, Qf)
    elif sc.grid is not None:
        from .powergrid import demo_cost

        c = demo_cost(sc.grid.n_gen)
        sc.cost_raw = (c.Q, c.R, c.Qf)

    if cp.has_section("samples"):
        _load_samples(cp, sc)

    if x0 is not None:
        sc.x0 = parse_vector(x0, "x0")

    sc.lam = _get(cp, "penalty", "lambda", float)
    sc.thetas = _get(cp, "penalty", "theta", lambda s: parse_list(s, float, "theta"))
    sc.betas = _get(cp, "penalty", "beta", lambda s: parse_list(s, float, "beta"))
    sc.c1 = _get(cp, "penalty", "c1", float, sc.c1)
    sc.c2 = _get(cp, "penalty", "c2", float, sc.c2)
    sc.q = _get(cp, "penalty", "q", float, sc.q)
    if sc.lam is not None and (sc.thetas or sc.betas):
        raise ScenarioError("[penalty] must give either lambda or theta/beta, not both")

    sc.radius_N = _get(cp, "radius", "N", lambda s: parse_list(s, int, "N"), sc.radius_N)
    sc.radius_T = _get(cp, "radius", "T", lambda s: parse_list(s, int, "T"))
    sc.radius_k = _get(cp, "radius", "k", int)
    sc.zeta = _get(cp, "radius", "zeta", float)
    return sc


def _load_system(cp, sc):
    grid = _get(cp, "system", "grid", str)
    inline = [key for key in ("A", "B", "Xi") if cp.has_option("system", key)]
    if grid is not None and inline:
        raise ScenarioError("[system] gives both a grid file and inline matrices")
    if grid is not None:
        from .powergrid import GridModel, discretize, load_grid

        base = Path(sc.path).parent if sc.path else Path(".")
        g = load_grid(None if grid == "bundled" else base / grid)
        dt = _get(cp, "system", "dt", float)
        if dt is not None:
            g = GridModel(g.H, g.D, g.L, g.omega_s, dt)
        sc.grid = g
        sc.sys = discretize(g)
        return
    if len(inline) < 2 or "A" not in inline or "B" not in inline:
        raise ScenarioError("[system] needs A and B (Xi defaults to B) or a grid file")
    A = parse_matrix(cp.get("system", "A"), "A")
    B = parse_matrix(cp.get("system", "B"), "B")
    Xi = _get(cp, "system", "Xi", lambda s: parse_matrix(s, "Xi"), B)
    sc.sys = LinearSystem(A, B, Xi)


def _load_samples(cp, sc):
    data = _get(cp, "samples", "data", str)
    mean = _get(cp, "samples", "mean", lambda s: parse_vector(s, "mean"))
    sc.sample_seed = _get(cp, "samples", "seed", int)
    sc.N = _get(cp, "samples", "N", int)
    if mean is not None:
        if sc.sys is not None and mean.size == 1:
            mean = np.full(sc.sys.k, mean[0])
        if sc.sys is not None and mean.size != sc.sys.k:
            raise ScenarioError(f"mean has {mean.size} entries, disturbance dimension is {sc.sys.k}")
        k = mean.size
        cov = _get(cp, "samples", "cov", lambda s: parse_matrix(s, "cov"))
        std = _get(cp, "samples", "std", float)
        if cov is not None and std is not None:
            raise ScenarioError("[samples] gives both cov and std")
        if std is not None:
            cov = std * std * np.eye(k)
        if cov is None:
            cov = np.zeros((k, k))
        if cov.shape != (k, k):
            raise ScenarioError(f"cov must be {k}x{k}")
        sc.truth_mean, sc.truth_cov = mean, cov
    if data is not None:
        pts = parse_matrix(data, "data")
        if sc.sys is not None and pts.shape[1] != sc.sys.k and pts.shape[0] == sc.sys.k:
            pts = pts.T
        sc.emp = EmpiricalDistribution(pts)
        if sc.N is not None and sc.N != sc.emp.N:
            raise ScenarioError(f"[samples] N={sc.N} but data has {sc.emp.N} rows")
        sc.N = sc.emp.N
    elif mean is None:
        raise ScenarioError("[samples] needs data or a Gaussian mean")


def finalize(sc: Scenario, args) -> Scenario:
    """Apply command-line overrides, draw Gaussian samples and default ``x0``."""
    from .simulator import SAMPLE_STREAM, run_stream

    if args.lam is not None and (args.theta or args.beta):
        raise UsageError("--lambda cannot be combined with --theta or --beta")
    if args.lam is not None:
        sc.lam, sc.thetas, sc.betas = args.lam, None, None
    if args.theta or args.beta:
        sc.lam = None
        sc.thetas = args.theta or None
        sc.betas = args.beta or None
    if args.horizon is not None:
        sc.horizon = _horizon(args.horizon)
    if args.seed is not None:
        sc.seed = args.seed
    if args.runs is not None:
        sc.runs = args.runs
    if getattr(args, "mode", None):
        sc.mode = args.mode
    if getattr(args, "controller", None):
        sc.controller = args.controller
    if args.out is not None:
        sc.out = args.out
    if sc.runs < 1:
        raise UsageError("--runs must be positive")
    if sc.lam is not None and not sc.lam > 0:
        raise UsageError("lambda must be positive")
    if sc.cost_raw is not None:
        sc.cost = sc.make_cost(sc.horizon)
    if sc.emp is None and sc.truth_mean is not None:
        if sc.N is None:
            raise ScenarioError("[samples] with a Gaussian mean needs N")
        seed = sc.seed if sc.sample_seed is None else sc.sample_seed
        rng = run_stream(seed, SAMPLE_STREAM)
        from .simulator import Sampler

        sc.emp = EmpiricalDistribution(Sampler(sc.truth_mean, sc.truth_cov).sample(rng, sc.N))
    if sc.sys is not None:
        if sc.x0 is None:
            sc.x0 = np.zeros(sc.sys.n)
        if sc.x0.size != sc.sys.n:
            raise ScenarioError(f"x0 has {sc.x0.size} entries, state dimension is {sc.sys.n}")
    return sc


# ------------------------------------------------------------------- helpers

def _radius(sc: Scenario, beta: float, T: Optional[int], N: Optional[int] = None) -> float:
    from .robustness import RadiusParams, radius_compact, radius_light_tail

    N = N or sc.N or (sc.emp.N if sc.emp is not None else None)
    if N is None:
        raise ScenarioError("the radius needs a sample count N")
    p = RadiusParams(int(N), beta, T or 1, sc.k, sc.c1, sc.c2, sc.q, sc.zeta)
    return radius_compact(p) if sc.zeta is not None else radius_light_tail(p)


def _thetas(sc: Scenario) -> list:
    """Radii to tune for: explicit thetas, else one per beta."""
    if sc.thetas:
        return list(sc.thetas)
    if sc.betas:
        return [_radius(sc, b, sc.horizon) for b in sc.betas]
    raise ScenarioError("tuning needs theta or beta")


def _tune(sc: Scenario, theta: float):
    from .tuning import optimize_lambda_finite, optimize_lambda_infinite

    if sc.horizon is not None:
        return optimize_lambda_finite(sc.sys, sc.cost, sc.emp, sc.horizon, sc.x0, theta)
    return optimize_lambda_infinite(sc.sys, sc.cost, sc.emp, theta)


def _warn_tail(tp):
    if tp.monotone_tail:
        print(f"warning: MonotoneTail: objective still nonincreasing at lambda={tp.lambda_star:.6g} "
              f"(theta={tp.theta:.6g}); lambda* is the search cap", file=sys.stderr)


def _penalty(sc: Scenario, ctx) -> float:
    """Fixed lambda, or the tuned lambda* for the first theta (tuning CSV is written)."""
    if sc.lam is not None:
        return sc.lam
    theta = _thetas(sc)[0]
    tp = _tune(sc, theta)
    _warn_tail(tp)
    ctx.csv("tuning.csv", *io.tuning_rows(tp.evaluations))
    ctx.summary["tuned"] = {"theta": theta, "lambda_star": tp.lambda_star, "bound": tp.upper_bound,
                            "monotone_tail": tp.monotone_tail, "lambda_floor": tp.lambda_floor}
    return tp.lambda_star


class _Context:
    """Collects written files for the manifest."""

    def __init__(self, out: str):
        self.out = Path(out)
        self.files = {}
        self.summary = {}

    def _record(self, name, text):
        io._write(self.out / name, text)
        self.files[name] = io.sha256_text(text)

    def csv(self, name, header, rows):
        self._record(name, io.format_csv(header, rows))

    def text(self, name, text):
        self._record(name, text)

    def json(self, name, obj):
        self._record(name, io.format_json(obj))


# ------------------------------------------------------------------ commands

def cmd_solve_finite(sc: Scenario, ctx: _Context):
    from .finite_horizon import solve_finite
    from .model import validate_problem

    sc.require_system()
    if sc.horizon is None:
        raise ScenarioError("solve-finite needs a horizon (--horizon or [run] horizon)")
    sc.require_penalty()
    lam = _penalty(sc, ctx)
    sol = solve_finite(sc.sys, sc.cost, sc.emp, lam, horizon=sc.horizon)
    ctx.text("solution.txt", io.dump_finite(sol))
    ctx.csv("policy.csv", *io.policy_rows(sol.K, sol.L))
    rep = validate_problem(sc.sys, sc.cost, sc.emp)
    ctx.json("certificate.json", {"lambda": lam, "horizon": sc.horizon,
                                  "stage_margins": sol.margins, "assumption_margin": sol.assumption_margin,
                                  "validation_ok": rep.ok, "validation_problems": list(rep.findings)})
    ctx.summary.update({"lambda": lam, "value_at_x0": sol.value(sc.x0, 0),
                        "value_per_stage": sol.value(sc.x0, 0) / sc.horizon})
    print(f"lambda={lam:.17g} V0(x0)={sol.value(sc.x0, 0):.17g}")


def cmd_solve_infinite(sc: Scenario, ctx: _Context):
    from .infinite_horizon import (check_assumptions, solve_are_eigen, solve_are_fixed_point,
                                   stability_certificates)

    sc.require_system()
    sc.horizon = None
    sc.cost = sc.make_cost(None)
    sc.require_penalty()
    lam = _penalty(sc, ctx)
    cert = check_assumptions(sc.sys, sc.cost, lam)
    if not cert.ok:
        from .errors import AssumptionViolated

        raise AssumptionViolated("; ".join(cert.reasons()))
    try:
        sol = solve_are_eigen(sc.sys, sc.cost, lam, sc.emp)
        ref = solve_are_fixed_point(sc.sys, sc.cost, sc.emp, lam, check=False)
        gap = float(np.linalg.norm(sol.P_ss - ref.P_ss))
    except SingularA:
        print("note: A is singular, using fixed-point iteration only", file=sys.stderr)
        sol = solve_are_fixed_point(sc.sys, sc.cost, sc.emp, lam, check=False)
        gap = math.nan
    stab = stability_certificates(sol, sc.sys)
    ctx.text("solution.txt", io.dump_steady(sol))
    ctx.csv("policy.csv", *io.policy_rows(sol.K_ss, sol.L_ss))
    ctx.json("certificate.json", {
        "lambda": lam, "phi_min_eig": cert.phi_min_eig, "stabilizable": cert.stabilizable,
        "observable": cert.observable, "penalty_margin": sol.penalty_margin,
        "closed_loop_spectral_radius": stab.closed_loop_radius,
        "mean_state_gain_radius": stab.mean_state_radius, "mean_state_limit": stab.mean_state_limit,
        "stable": stab.stable, "method": sol.method, "dual_method_gap": gap,
        "are_residual": sol.are_residual})
    ctx.summary.update({"lambda": lam, "rho": sol.rho})
    print(f"lambda={lam:.17g} rho={sol.rho:.17g} method={sol.method}")


def cmd_tune(sc: Scenario, ctx: _Context):
    sc.require_system()
    thetas = _thetas(sc)
    rows = []
    for i, theta in enumerate(thetas):
        tp = _tune(sc, theta)
        _warn_tail(tp)
        name = "tuning.csv" if len(thetas) == 1 else f"tuning_{i}.csv"
        ctx.csv(name, *io.tuning_rows(tp.evaluations))
        rows.append([theta, tp.lambda_star, tp.upper_bound, tp.lambda_floor, tp.monotone_tail])
        print(f"theta={theta:.6g} lambda*={tp.lambda_star:.17g} bound={tp.upper_bound:.17g}")
    ctx.csv("lambda_star.csv", ["theta", "lambda_star", "bound", "lambda_floor", "monotone_tail"], rows)
    ctx.summary["tuned"] = [dict(zip(["theta", "lambda_star", "bound", "lambda_floor", "monotone_tail"], r))
                            for r in rows]


def cmd_radius(sc: Scenario, ctx: _Context):
    betas = sc.betas or [0.05]
    Ts = sc.radius_T or [sc.horizon or 1]
    Ns = [sc.N] if sc.N and not sc.radius_N else sc.radius_N
    table = [(N, T, b, _radius(sc, b, T, N)) for b in betas for T in Ts for N in Ns]
    ctx.csv("radius.csv", *io.radius_rows(table))
    ctx.summary["rows"] = len(table)
    for N, T, b, th in table:
        print(f"N={N} T={T} beta={b:.6g} theta={th:.17g}")


def _steady_policy(sc, lam):
    from .infinite_horizon import lqg_steady, solve_are_fixed_point

    sol = solve_are_fixed_point(sc.sys, sc.cost, sc.emp, lam)
    if sc.controller == "lqg":
        _, _, _, K, L = lqg_steady(sc.sys, sc.cost, sc.emp)
        from .model import AffinePolicy

        return sol, AffinePolicy(K, L)
    return sol, sol


def cmd_simulate(sc: Scenario, ctx: _Context):
    from .finite_horizon import solve_finite, solve_lqg_finite
    from .simulator import (Empirical, HinfPointwise, Sampler, WorstCaseFinite, WorstCaseSteady,
                            estimate_cost, settling_time, simulate)

    sc.require_system()
    sc.require_penalty()
    if sc.controller not in ("minimax", "lqg"):
        raise UsageError(f"unknown controller {sc.controller!r}")
    lam = _penalty(sc, ctx)
    if sc.horizon is not None:
        T = sc.horizon
        sol = solve_finite(sc.sys, sc.cost, sc.emp, lam, horizon=T)
        policy = sol if sc.controller == "minimax" else solve_lqg_finite(sc.sys, sc.cost, sc.emp, horizon=T)
        worst = WorstCaseFinite(sol, sc.sys)
    else:
        T = sc.steps
        sol, policy = _steady_policy(sc, lam)
        worst = WorstCaseSteady(sol, sc.sys, sc.emp)
    if sc.mode == "worst-case":
        dist = worst
    elif sc.mode == "empirical":
        dist = Empirical(sc.emp, sc.sys.n)
    elif sc.mode == "truth":
        if sc.truth_mean is None:
            raise ScenarioError("mode truth needs a Gaussian [samples] mean")
        dist = Sampler(sc.truth_mean, sc.truth_cov, n=sc.sys.n)
    elif sc.mode == "hinf":
        dist = HinfPointwise(sol, sc.sys)
    else:
        raise UsageError(f"unknown mode {sc.mode!r}")
    est = {"cost": estimate_cost(sc.sys, policy, dist, sc.x0, T, sc.runs, sc.seed, sc.cost)}
    if sc.mode == "worst-case":
        est["penalized_cost"] = estimate_cost(sc.sys, policy, dist, sc.x0, T, sc.runs, sc.seed, sc.cost,
                                              lam=lam, penalized=True)
    ctx.csv("estimates.csv", *io.estimate_rows(est))
    states = simulate(sc.sys, policy, dist, sc.x0, T, sc.seed, range(sc.runs), sc.cost)["states"]
    dt = sc.grid.dt if sc.grid is not None else 1.0
    ctx.csv("bands.csv", *io.band_rows(states, dt=dt))
    if sc.grid is not None:
        n = sc.grid.n_gen
        st = settling_time(states.mean(axis=0), range(n, 2 * n), dt=dt)
        ctx.csv("settling.csv", ["generator", "settling_time"], [[i + 1, v] for i, v in enumerate(st)])
        ctx.summary["average_settling_time"] = float(st.mean())
    ctx.summary.update({"lambda": lam, "estimates": {k: [e.mean, e.std_error] for k, e in est.items()}})
    for k, e in est.items():
        print(f"{k}: {e.mean:.17g} +/- {e.std_error:.3g} ({e.n_runs} runs)")


def cmd_reliability(sc: Scenario, ctx: _Context):
    from .simulator import Sampler, estimate_reliability

    sc.require_system()
    if sc.truth_mean is None:
        raise ScenarioError("reliability needs a Gaussian [samples] mean as the true distribution")
    if sc.horizon is None:
        raise ScenarioError("reliability needs a finite horizon")
    truth = Sampler(sc.truth_mean, sc.truth_cov)
    thetas = _thetas(sc)
    rows = []
    for theta in thetas:
        r = estimate_reliability(sc.sys, sc.cost, truth, sc.N, theta, None, sc.horizon, sc.runs, sc.seed,
                                 sc.x0, detail=True)
        rows.append([theta, r.reliability, r.n_trials, math.fsum(r.lambdas) / r.n_trials,
                     math.fsum(r.bounds) / r.n_trials, math.fsum(r.costs) / r.n_trials])
        print(f"theta={theta:.6g} reliability={r.reliability:.4f}")
    ctx.csv("reliability.csv", ["theta", "reliability", "n_trials", "mean_lambda_star", "mean_bound",
                                "mean_cost"], rows)
    ctx.summary["reliability"] = {str(r[0]): r[1] for r in rows}


def cmd_grid_demo(sc: Scenario, ctx: _Context):
    from .powergrid import demo_scenario, run_grid_demo

    theta = sc.thetas[0] if sc.thetas else 0.5
    T = sc.horizon or 150
    demo = demo_scenario(sc.grid, theta=theta, seed=sc.seed if sc.sample_seed is None else sc.sample_seed,
                         T=T)
    res = run_grid_demo(demo, runs=sc.runs, seed=sc.seed)
    rows = [[i + 1, res.per_generator["minimax"][i], res.per_generator["lqg"][i]]
            for i in range(demo.grid.n_gen)]
    rows.append(["average", res.averages["minimax"], res.averages["lqg"]])
    ctx.csv("settling.csv", ["generator", "minimax", "lqg"], rows)
    p = res.paired_pvalue()
    ctx.summary.update({"theta": theta, "lambda": res.lambda_star, "bound": res.upper_bound,
                        "averages": res.averages, "paired_pvalue": p, "horizon_end": res.horizon_end})
    print(f"average settling time: minimax {res.averages['minimax']:.3f} s, lqg {res.averages['lqg']:.3f} s "
          f"(paired p={p:.3g}; {res.horizon_end:g} s means never settled)")


COMMANDS = {
    "solve-finite": cmd_solve_finite,
    "solve-infinite": cmd_solve_infinite,
    "tune": cmd_tune,
    "radius": cmd_radius,
    "simulate": cmd_simulate,
    "reliability": cmd_reliability,
    "grid-demo": cmd_grid_demo,
}
NEEDS_SCENARIO = {"solve-finite", "solve-infinite", "tune", "simulate", "reliability"}


# -------------------------------------------------------------------- parser

def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", metavar="PATH")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--runs", type=int)
    common.add_argument("--theta", type=_floats, help="radius, or a comma-separated list")
    common.add_argument("--beta", type=_floats, help="risk level, or a comma-separated list")
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--horizon", metavar="T", help="stages, or 'inf'")
    p = _Parser(prog="minimax-lq", description="Wasserstein-penalized minimax LQ control.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "simulate":
            sp.add_argument("--mode", choices=["worst-case", "empirical", "truth", "hinf"])
            sp.add_argument("--controller", choices=["minimax", "lqg"])
    rp = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    rp.add_argument("manifest")
    rp.add_argument("--out", metavar="DIR")
    return p


def _versions():
    import scipy

    return {"minimax_lq": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _replay(args) -> int:
    import json

    try:
        man = json.loads(Path(args.manifest).read_text())
        argv = list(man["argv"])
        recorded = man["outputs"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read manifest {args.manifest}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if man.get("scenario_path"):
        text = Path(man["scenario_path"]).read_text()
        if io.sha256_text(text) != man.get("scenario_sha256"):
            print("error: scenario file changed since the manifest was written", file=sys.stderr)
            return EXIT_MISMATCH
    out = args.out or str(Path(args.manifest).parent)
    code = main(argv + ["--out", out])
    if code != EXIT_OK:
        return code
    fresh = Path(out)
    bad = [n for n, h in recorded.items()
           if not (fresh / n).exists() or io.sha256_text((fresh / n).read_text()) != h]
    for n in bad:
        print(f"mismatch: {n}", file=sys.stderr)
    return EXIT_MISMATCH if bad else EXIT_OK


def _run(args, argv) -> int:
    if args.command == "replay":
        return _replay(args)
    if args.command in NEEDS_SCENARIO and args.scenario is None:
        raise UsageError(f"{args.command} needs --scenario")
    sc = finalize(load_scenario(args.scenario), args)
    ctx = _Context(sc.out)
    COMMANDS[args.command](sc, ctx)
    # argv minus --out, so a replay can redirect the outputs
    clean, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        clean.append(a)
    manifest = {
        "command": args.command,
        "argv": clean,
        "scenario_path": str(Path(sc.path).resolve()) if sc.path else None,
        "scenario_sha256": io.sha256_text(sc.text) if sc.path else None,
        "seeds": {"run": sc.seed, "samples": sc.seed if sc.sample_seed is None else sc.sample_seed},
        "runs": sc.runs,
        "versions": _versions(),
        "kernel_backend": kernels.BACKEND,
        "outputs": dict(sorted(ctx.files.items())),
        "summary": ctx.summary,
    }
    io.write_json(ctx.out / "manifest.json", manifest)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return _run(args, argv)
    except (UsageError, ScenarioError, DimensionMismatch, InvalidRisk) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BadDataFile as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PenaltyTooSmall as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ASSUMPTION
    except AssumptionError as exc:
        print(f"assumption violated: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
