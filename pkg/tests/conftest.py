"""Shared random-instance generators.

Disturbance matrices are built as ``Xi = B G`` so that the disturbance
enters through the input channel; that keeps ``Phi`` positive
semidefinite for large penalties and the steady problem well posed.
"""

import numpy as np
import pytest

from minimax_lq.model import CostSpec, EmpiricalDistribution, LinearSystem


def random_instance(rng, n=2, m=1, k=1, N=3, horizon=None, scale=1.0, spread=1.0):
    A = rng.standard_normal((n, n))
    A *= scale / max(abs(np.linalg.eigvals(A)).max(), 1e-12)
    B = rng.standard_normal((n, m))
    Xi = B @ rng.standard_normal((m, k))
    C = rng.standard_normal((n, n))
    Q = C.T @ C / n + 0.5 * np.eye(n)
    R = np.diag(rng.uniform(0.5, 2.0, m))
    emp = EmpiricalDistribution(spread * rng.standard_normal((N, k)) + 0.3)
    return LinearSystem(A, B, Xi), CostSpec(Q, R, horizon=horizon), emp


def well_conditioned_instance(rng, n=3, m=2, k=2, N=4):
    """Instances whose stabilizing ARE solution has modest norm.

    ``A`` has spectral radius in [0.5, 1.1], ``B`` is well conditioned and
    ``Q`` is close to identity, so the Riccati solution stays near unit
    scale and floating-point residuals stay near machine precision.
    """
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.5, 1.1) / abs(np.linalg.eigvals(A)).max()
    U, _, Vt = np.linalg.svd(rng.standard_normal((n, m)), full_matrices=False)
    B = U @ np.diag(rng.uniform(0.7, 1.3, m)) @ Vt
    Xi = B @ (0.5 * rng.standard_normal((m, k)))
    Q = np.eye(n) + 0.1 * np.diag(rng.uniform(0, 1, n))
    R = np.eye(m)
    emp = EmpiricalDistribution(0.5 * rng.standard_normal((N, k)) + 0.2)
    return LinearSystem(A, B, Xi), CostSpec(Q, R), emp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scalar_problem():
    sys = LinearSystem([[1.0]], [[1.0]], [[1.0]])
    cost = CostSpec([[1.0]], [[1.0]], [[1.0]], horizon=1)
    emp = EmpiricalDistribution([[0.0]])
    return sys, cost, emp


def safe_lambda(sys, cost, emp, T, factor=2.0):
    """A penalty comfortably above the finite-horizon threshold."""
    from minimax_lq.tuning import find_lambda_hat_finite

    return factor * find_lambda_hat_finite(sys, cost, emp, T, tol=1e-6) + 1.0
