# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the rollout and exhaustive-assignment loops."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double DIVERGENCE = 1e12


def rollout_batch(A, B, Xi, K, L, G, W, x0, Q, R):
    cdef const double[:, ::1] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] B_ = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[:, ::1] X_ = np.ascontiguousarray(Xi, dtype=np.float64)
    cdef const double[:, :, ::1] K_ = np.ascontiguousarray(K, dtype=np.float64)
    cdef const double[:, ::1] L_ = np.ascontiguousarray(L, dtype=np.float64)
    cdef const double[:, :, ::1] G_ = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[:, :, ::1] W_ = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[::1] x0_ = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[:, ::1] Q_ = np.ascontiguousarray(Q, dtype=np.float64)
    cdef const double[:, ::1] R_ = np.ascontiguousarray(R, dtype=np.float64)

    cdef Py_ssize_t runs = W_.shape[0], T = W_.shape[1], k = W_.shape[2]
    cdef Py_ssize_t n = A_.shape[0], m = B_.shape[1]
    cdef bint kv = K_.shape[0] > 1, lv = L_.shape[0] > 1, gv = G_.shape[0] > 1

    states_a = np.zeros((runs, T + 1, n))
    inputs_a = np.zeros((runs, T, m))
    dists_a = np.zeros((runs, T, k))
    costs_a = np.zeros((runs, T))
    diverged_a = np.full(runs, -1, dtype=np.int64)
    cdef double[:, :, ::1] S = states_a
    cdef double[:, :, ::1] U = inputs_a
    cdef double[:, :, ::1] D = dists_a
    cdef double[:, ::1] C = costs_a
    cdef long long[::1] dv = diverged_a

    x_a = np.empty(n)
    xn_a = np.empty(n)
    u_a = np.empty(m)
    w_a = np.empty(k)
    cdef double[::1] x = x_a
    cdef double[::1] xn = xn_a
    cdef double[::1] u = u_a
    cdef double[::1] w = w_a

    cdef Py_ssize_t r, t, i, j, tk, tl, tg
    cdef double acc, cost, qx

    for r in range(runs):
        for i in range(n):
            x[i] = x0_[i]
            S[r, 0, i] = x[i]
        for t in range(T):
            tk = t if kv else 0
            tl = t if lv else 0
            tg = t if gv else 0
            for i in range(m):
                acc = L_[tl, i]
                for j in range(n):
                    acc += K_[tk, i, j] * x[j]
                u[i] = acc
                U[r, t, i] = acc
            for i in range(k):
                acc = W_[r, t, i]
                for j in range(n):
                    acc += G_[tg, i, j] * x[j]
                w[i] = acc
                D[r, t, i] = acc
            cost = 0.0
            for i in range(n):
                qx = 0.0
                for j in range(n):
                    qx += Q_[i, j] * x[j]
                cost += x[i] * qx
            for i in range(m):
                qx = 0.0
                for j in range(m):
                    qx += R_[i, j] * u[j]
                cost += u[i] * qx
            C[r, t] = cost
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += A_[i, j] * x[j]
                for j in range(m):
                    acc += B_[i, j] * u[j]
                for j in range(k):
                    acc += X_[i, j] * w[j]
                xn[i] = acc
            for i in range(n):
                if not fabs(xn[i]) <= DIVERGENCE:
                    dv[r] = t + 1
                    break
            if dv[r] >= 0:
                break
            for i in range(n):
                x[i] = xn[i]
                S[r, t + 1, i] = x[i]
    return states_a, inputs_a, dists_a, costs_a, diverged_a


def best_assignment(C):
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    perm_a = np.arange(n, dtype=np.int64)
    best_a = perm_a.copy()
    cnt_a = np.zeros(n, dtype=np.int64)
    cdef long long[::1] perm = perm_a
    cdef long long[::1] best = best_a
    cdef long long[::1] cnt = cnt_a
    cdef Py_ssize_t i, j, a
    cdef long long tmp
    cdef double cost, best_cost = 0.0
    for a in range(n):
        best_cost += c[a, perm[a]]
    i = 1
    while i < n:
        if cnt[i] < i:
            j = 0 if i % 2 == 0 else cnt[i]
            tmp = perm[j]
            perm[j] = perm[i]
            perm[i] = tmp
            cost = 0.0
            for a in range(n):
                cost += c[a, perm[a]]
            if cost < best_cost:
                best_cost = cost
                for a in range(n):
                    best[a] = perm[a]
            cnt[i] += 1
            i = 1
        else:
            cnt[i] = 0
            i += 1
    return best_a
