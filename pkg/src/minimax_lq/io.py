"""Text serialization: matrix dumps, CSV tables and JSON summaries.

All floats are written with 17 significant digits so that values survive a
round trip exactly. Output is a pure function of its input (no timestamps),
which keeps reruns byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import BadDataFile
from .finite_horizon import FiniteSolution
from .infinite_horizon import SteadySolution

DUMP_MAGIC = "minimax-lq-dump 1"
PathLike = Union[str, Path]


def fmt(v) -> str:
    """17-significant-digit text for floats; integers, bools and strings pass through."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def _write(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(text)
    return path


# ---------------------------------------------------------------- matrix dumps

def _matrix_block(name, M) -> list:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"matrix {name} {M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(fmt(v) for v in row) for row in M]
    return lines


def format_dump(kind: str, scalars: dict, matrices: Sequence) -> str:
    """Generic dump: a header, ``scalar`` lines, then row-major ``matrix`` blocks.

    ``matrices`` is a sequence of ``(name, array)``; vectors are written as
    ``1 x n`` rows.
    """
    lines = [DUMP_MAGIC, f"kind {kind}"]
    lines += [f"scalar {k} {fmt(v)}" for k, v in scalars.items()]
    for name, M in matrices:
        lines += _matrix_block(name, M)
    return "\n".join(lines) + "\n"


def dump_finite(sol: FiniteSolution) -> str:
    n, m = sol.K.shape[2], sol.K.shape[1]
    scalars = {"T": sol.T, "n": n, "m": m, "lambda": sol.lam}
    scalars.update({f"z[{t}]": sol.z[t] for t in range(sol.T + 1)})
    mats = []
    for t in range(sol.T + 1):
        mats += [(f"P[{t}]", sol.P[t]), (f"r[{t}]", sol.r[t][None])]
    for t in range(sol.T):
        mats += [(f"K[{t}]", sol.K[t]), (f"L[{t}]", sol.L[t][None])]
    mats.append(("margins", np.asarray(sol.margins)[None]))
    return format_dump("finite", scalars, mats)


def dump_steady(sol: SteadySolution) -> str:
    scalars = {"n": sol.P_ss.shape[0], "m": sol.K_ss.shape[0], "lambda": sol.lam, "rho": sol.rho,
               "closed_loop_spectral_radius": sol.closed_loop_spectral_radius,
               "mean_state_gain_radius": sol.mean_state_gain_radius,
               "are_residual": sol.are_residual, "penalty_margin": sol.penalty_margin,
               "method": sol.method}
    mats = [("P_ss", sol.P_ss), ("r_ss", sol.r_ss[None]), ("K_ss", sol.K_ss),
            ("L_ss", sol.L_ss[None]), ("Phi", sol.Phi)]
    return format_dump("steady", scalars, mats)


def parse_dump(text: str) -> dict:
    """Read a dump back into ``{"kind": str, "scalars": {...}, "matrices": {...}}``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != DUMP_MAGIC:
        raise BadDataFile("not a minimax-lq dump")
    out = {"kind": None, "scalars": {}, "matrices": {}}
    i = 1
    try:
        while i < len(lines):
            head = lines[i].split()
            if head[0] == "kind":
                out["kind"] = head[1]
                i += 1
            elif head[0] == "scalar":
                val = head[2]
                try:
                    val = int(val)
                except ValueError:
                    try:
                        val = float(val)
                    except ValueError:
                        pass
                out["scalars"][head[1]] = val
                i += 1
            elif head[0] == "matrix":
                rows, cols = int(head[2]), int(head[3])
                body = [[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + rows]]
                M = np.array(body, dtype=float).reshape(rows, cols)
                out["matrices"][head[1]] = M
                i += 1 + rows
            else:
                raise BadDataFile(f"unexpected line {lines[i]!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, BadDataFile):
            raise
        raise BadDataFile(f"malformed dump near line {i + 1}: {exc}") from exc
    return out


def write_dump(path: PathLike, sol) -> Path:
    text = dump_finite(sol) if isinstance(sol, FiniteSolution) else dump_steady(sol)
    return _write(path, text)


# ---------------------------------------------------------------------- tables

def format_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header {len(header)}")
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return _write(path, format_csv(header, rows))


def read_csv(path: PathLike):
    """Header and rows with numeric fields converted to float."""
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    rows = []
    for ln in text[1:]:
        row = []
        for v in ln.split(","):
            try:
                row.append(float(v))
            except ValueError:
                row.append(v)
        rows.append(row)
    return header, rows


def policy_rows(K, L):
    """``(t, i, K[t][i, :]..., L[t][i])`` rows; ``K`` has a leading stage axis."""
    K = np.asarray(K, dtype=float)
    L = np.asarray(L, dtype=float)
    if K.ndim == 2:
        K, L = K[None], L[None]
    n = K.shape[2]
    header = ["t", "input"] + [f"K{j}" for j in range(n)] + ["L"]
    rows = [[t, i, *K[t, i], L[t, i]] for t in range(K.shape[0]) for i in range(K.shape[1])]
    return header, rows


def tuning_rows(evaluations, sort: bool = True):
    rows = [[lam, obj, margin] for lam, obj, margin in evaluations]
    if sort:
        rows.sort(key=lambda r: r[0])
    return ["lambda", "objective", "margin"], rows


def radius_rows(table):
    """``table`` is a sequence of ``(N, T, beta, theta)``."""
    return ["N", "T", "beta", "theta"], [list(r) for r in table]


def estimate_rows(estimates: dict):
    """``{name: MonteCarloEstimate}`` to rows."""
    rows = [[name, e.mean, e.std_error, e.n_runs, e.seed] for name, e in estimates.items()]
    return ["quantity", "mean", "std_error", "n_runs", "seed"], rows


PERCENTILES = (5.0, 25.0, 50.0, 75.0, 95.0)


def band_rows(states, percentiles=PERCENTILES, dt: float = 1.0):
    """Per-step percentile bands and mean of each state component over runs."""
    X = np.asarray(states, dtype=float)
    q = np.percentile(X, percentiles, axis=0)
    mean = X.mean(axis=0)
    header = ["time", "component"] + [f"p{int(p)}" for p in percentiles] + ["mean"]
    rows = [[t * dt, j, *q[:, t, j], mean[t, j]] for t in range(X.shape[1]) for j in range(X.shape[2])]
    return header, rows


# ------------------------------------------------------------------ summaries

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else fmt(v)
    return v


def format_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: PathLike, obj) -> Path:
    return _write(path, format_json(obj))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
