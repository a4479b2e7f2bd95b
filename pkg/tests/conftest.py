"""Shared fixtures and independent oracles for the test suite.

The dense oracles here assemble the staggered update equations directly as
full linear systems and solve them with numpy, deliberately bypassing the
rank-1 solve path they are used to check.
"""

import numpy as np
import pytest

from ieqint.hamiltonian import HamiltonianSystem, SplitPotential
from ieqint.linalg import MassMatrix, SparseOperator
from ieqint.models import fpu, plate, string


@pytest.fixture(scope="session")
def fpu_system():
    return fpu.build(fpu.FpuParams(half_count=3, omega=50.0))


@pytest.fixture(scope="session")
def string_system():
    return string.build(string.c3_params(segments=40))


@pytest.fixture(scope="session")
def plate_system():
    return plate.build(plate.PlateParams(grid_m=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def linear_fpu_system(omega=50.0, half_count=3):
    """FPU with the quartic springs removed: V = q'Kq/2, V' = 0."""
    base = fpu.build(fpu.FpuParams(half_count=half_count, omega=omega))
    k_op = base.split.k_op
    n = base.n
    return HamiltonianSystem(
        n=n,
        mass=base.mass,
        potential=lambda q: 0.5 * float(q @ (k_op @ q)),
        gradient=lambda q: k_op @ q,
        split=SplitPotential(
            k_op=k_op,
            residual=lambda q: 0.0,
            residual_gradient=lambda q: np.zeros(n),
        ),
    )


def central_gradient(f, q, step):
    """Central finite differences of a scalar function."""
    grad = np.zeros_like(q)
    for i in range(q.shape[0]):
        e = np.zeros_like(q)
        e[i] = step
        grad[i] = (f(q + e) - f(q - e)) / (2.0 * step)
    return grad


def dense_staggered_step(system, q_n, q_nm1, psi_mh, k, eps=0.0, split=False):
    """Solve one staggered update as a dense (2N+1) linear system.

    Unknowns are (q_new, p_new, psi_new); the three update relations are
    assembled row by row and solved with numpy's general solver.
    """
    n = system.n
    if split:
        value = system.split.residual(q_n)
        grad = system.split.residual_gradient(q_n)
    else:
        value = system.potential(q_n)
        grad = system.gradient(q_n)
    if np.any(grad):
        g = grad / np.sqrt(2.0 * (value + eps))
    else:
        g = np.zeros(n)
    p_mh = system.mass.apply((q_n - q_nm1) / k)
    minv = np.linalg.inv(system.mass.to_matrix())

    a = np.zeros((2 * n + 1, 2 * n + 1))
    b = np.zeros(2 * n + 1)
    # q_new - k M^-1 p_new = q_n
    a[:n, :n] = np.eye(n)
    a[:n, n : 2 * n] = -k * minv
    b[:n] = q_n
    # p_new + (k/2) g psi_new = p_mh [- k K q_n] - (k/2) g psi_mh
    a[n : 2 * n, n : 2 * n] = np.eye(n)
    a[n : 2 * n, 2 * n] = 0.5 * k * g
    rhs_p = p_mh - 0.5 * k * g * psi_mh
    if split:
        rhs_p = rhs_p - k * (system.split.k_op @ q_n)
    b[n : 2 * n] = rhs_p
    # psi_new - (1/2) g . q_new = psi_mh - (1/2) g . q_nm1
    a[2 * n, 2 * n] = 1.0
    a[2 * n, :n] = -0.5 * g
    b[2 * n] = psi_mh - 0.5 * float(g @ q_nm1)

    x = np.linalg.solve(a, b)
    return x[:n], float(x[2 * n]), x[n : 2 * n]


def dense_variable_step(system, q_n, p_mh, psi_mh, k_n, k_ph, eps=0.0):
    """Dense (N+1) assembly of the variable-step update in (p_new, psi_new)."""
    n = system.n
    value = system.potential(q_n)
    grad = system.gradient(q_n)
    if np.any(grad):
        g = grad / np.sqrt(2.0 * (value + eps))
    else:
        g = np.zeros(n)
    minv = np.linalg.inv(system.mass.to_matrix())

    a = np.zeros((n + 1, n + 1))
    b = np.zeros(n + 1)
    a[:n, :n] = np.eye(n)
    a[:n, n] = 0.5 * k_n * g
    b[:n] = p_mh - 0.5 * k_n * g * psi_mh
    a[n, :n] = -0.5 * k_n * (minv.T @ g)
    a[n, n] = 1.0
    b[n] = psi_mh + 0.5 * k_n * float(g @ (minv @ p_mh))
    x = np.linalg.solve(a, b)
    p_new = x[:n]
    psi_new = float(x[n])
    q_new = q_n + k_ph * (minv @ p_new)
    return q_new, p_new, psi_new


def fit_slope(dts, errors):
    return float(np.polyfit(np.log(np.asarray(dts)), np.log(np.asarray(errors)), 1)[0])
