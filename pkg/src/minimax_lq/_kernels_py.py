"""Pure numpy implementations of the hot loops.

Semantics are shared with the compiled ``_kernels`` module; see
:mod:`minimax_lq.kernels` for the contract.
"""

from __future__ import annotations

import numpy as np

DIVERGENCE = 1e12


def rollout_batch(A, B, Xi, K, L, G, W, x0, Q, R):
    """Simulate ``R`` closed-loop runs of ``x+ = A x + B u + Xi w``.

    ``u_t = K_t x_t + L_t`` and ``w_t = G_t x_t + W[run, t]``. Gains ``K``,
    ``L``, ``G`` have a leading stage axis of length ``T`` or 1 (steady).
    Returns ``(states, inputs, dists, stage_costs, diverged_at)`` where
    ``diverged_at[run]`` is the first stage whose state exceeds the
    divergence threshold, or -1.
    """
    runs, T, k = W.shape
    n = A.shape[0]
    m = B.shape[1]
    states = np.zeros((runs, T + 1, n))
    inputs = np.zeros((runs, T, m))
    dists = np.zeros((runs, T, k))
    costs = np.zeros((runs, T))
    diverged = np.full(runs, -1, dtype=np.int64)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (runs, n)).copy()
    states[:, 0] = x
    alive = np.ones(runs, dtype=bool)
    for t in range(T):
        Kt = K[t if K.shape[0] > 1 else 0]
        Lt = L[t if L.shape[0] > 1 else 0]
        Gt = G[t if G.shape[0] > 1 else 0]
        u = x @ Kt.T + Lt
        w = x @ Gt.T + W[:, t]
        costs[:, t] = np.einsum("ri,ij,rj->r", x, Q, x) + np.einsum("ri,ij,rj->r", u, R, u)
        inputs[:, t] = u
        dists[:, t] = w
        x = x @ A.T + u @ B.T + w @ Xi.T
        bad = alive & ~(np.abs(x) <= DIVERGENCE).all(axis=1)
        if bad.any():
            diverged[bad] = t + 1
            alive &= ~bad
            x[bad] = 0.0
        states[:, t + 1] = x
    return states, inputs, dists, costs, diverged


def best_assignment(C):
    """Exhaustive minimum-cost permutation by Heap's algorithm.

    Returns ``perm`` with row ``i`` matched to column ``perm[i]``. Ties keep
    the first permutation found in Heap order.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    perm = list(range(n))
    best = list(perm)
    best_cost = sum(C[i, perm[i]] for i in range(n))
    c = [0] * n
    i = 1
    while i < n:
        if c[i] < i:
            j = 0 if i % 2 == 0 else c[i]
            perm[j], perm[i] = perm[i], perm[j]
            cost = 0.0
            for a in range(n):
                cost += C[a, perm[a]]
            if cost < best_cost:
                best_cost = cost
                best = list(perm)
            c[i] += 1
            i = 1
        else:
            c[i] = 0
            i += 1
    return np.array(best, dtype=np.int64)
