"""Compare the compiled and pure-Python kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Each case is timed with
``timeit`` (best of several repeats) on both backends, and the outputs are
checked for agreement before any timing is reported.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from minimax_lq import _kernels_py as pure

try:
    from minimax_lq import _kernels as compiled
except ImportError:
    compiled = None


def rollout_case(n, m, k, T, runs, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((n, m))
    Xi = rng.standard_normal((n, k))
    K = 0.01 * rng.standard_normal((T, m, n))
    L = 0.01 * rng.standard_normal((T, m))
    G = 0.01 * rng.standard_normal((T, k, n))
    W = rng.standard_normal((runs, T, k))
    args = (A, B, Xi, K, L, G, W, rng.standard_normal(n), np.eye(n), np.eye(m))
    return f"rollout n={n} T={T} runs={runs}", (lambda mod: mod.rollout_batch(*args))


def assignment_case(N, seed=0):
    C = np.random.default_rng(seed).random((N, N))
    return f"exhaustive assignment N={N}", (lambda mod: mod.best_assignment(C))


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller cases")
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the pure backend is available")
    scale = 1 if args.quick else 4
    cases = [rollout_case(2, 1, 1, 100, 50 * scale), rollout_case(20, 10, 10, 150, 10 * scale),
             rollout_case(4, 2, 2, 10_000, scale), assignment_case(6), assignment_case(8)]
    print(f"{'case':<36}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}")
    for name, fn in cases:
        t_py = min(timeit.repeat(lambda: fn(pure), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<36}{t_py:>14.2f}{'-':>14}{'-':>10}")
            continue
        if not _same(fn(pure), fn(compiled)):
            raise SystemExit(f"backends disagree on {name}")
        t_cy = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<36}{t_py:>14.2f}{t_cy:>14.2f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
