"""Alternating linear/quartic spring lattice with fixed end walls.

N = 2M point masses with unit mass matrix; odd-even pairs are joined by
linear springs of frequency omega and even-odd pairs (including the two
wall attachments) by quartic springs. Both potential contributions are
non-negative, and the linear part furnishes the natural splitting
K = (omega^2 / 2) I_M kron [[1, -1], [-1, 1]].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import IndexOutOfRange
from ..hamiltonian import HamiltonianSystem, SplitPotential
from ..linalg import MassMatrix, SparseOperator


@dataclass(frozen=True)
class FpuParams:
    half_count: int = 3  # M pairs of masses; the state has N = 2M coordinates
    omega: float = 50.0

    def __post_init__(self):
        if self.half_count < 1:
            raise ValueError("half_count must be >= 1")
        if self.omega <= 0.0:
            raise ValueError("omega must be positive")


def _pair_diffs(q):
    # q_{2i} - q_{2i-1} across the linear springs (1-based pair indices)
    return q[1::2] - q[0::2]


def _wall_diffs(q):
    # q_{2i+1} - q_{2i} across the quartic springs, with q_0 = q_{N+1} = 0
    ext = np.zeros(q.shape[0] + 2)
    ext[1:-1] = q
    return ext[1::2] - ext[0::2]


def build(params: FpuParams) -> HamiltonianSystem:
    """Assemble the lattice as a Hamiltonian system with identity mass."""
    m = params.half_count
    n = 2 * m
    w2 = params.omega**2

    def potential(q):
        d = _pair_diffs(q)
        c = _wall_diffs(q)
        return 0.25 * w2 * float(d @ d) + float(np.sum(c**4))

    def gradient(q):
        g = np.zeros(n)
        d = _pair_diffs(q)
        g[0::2] -= (0.5 * w2) * d
        g[1::2] += (0.5 * w2) * d
        c3 = 4.0 * _wall_diffs(q) ** 3
        g[0::2] += c3[:-1]
        g[1::2] -= c3[1:]
        return g

    def value_and_grad(q):
        d = _pair_diffs(q)
        c = _wall_diffs(q)
        value = 0.25 * w2 * float(d @ d) + float(np.sum(c**4))
        g = np.zeros(n)
        g[0::2] -= (0.5 * w2) * d
        g[1::2] += (0.5 * w2) * d
        c3 = 4.0 * c**3
        g[0::2] += c3[:-1]
        g[1::2] -= c3[1:]
        return value, g

    def residual(q):
        c = _wall_diffs(q)
        return float(np.sum(c**4))

    def residual_gradient(q):
        g = np.zeros(n)
        c3 = 4.0 * _wall_diffs(q) ** 3
        g[0::2] += c3[:-1]
        g[1::2] -= c3[1:]
        return g

    def residual_value_and_grad(q):
        c = _wall_diffs(q)
        g = np.zeros(n)
        c3 = 4.0 * c**3
        g[0::2] += c3[:-1]
        g[1::2] -= c3[1:]
        return float(np.sum(c**4)), g

    block = 0.5 * w2 * np.array([[1.0, -1.0], [-1.0, 1.0]])
    k_op = SparseOperator(sp.kron(sp.identity(m), block))

    return HamiltonianSystem(
        n=n,
        mass=MassMatrix.identity(n),
        potential=potential,
        gradient=gradient,
        value_and_grad=value_and_grad,
        split=SplitPotential(
            k_op=k_op,
            residual=residual,
            residual_gradient=residual_gradient,
            residual_value_and_grad=residual_value_and_grad,
        ),
        probe_default=0,  # first coordinate
        label=f"fpu(M={m}, omega={params.omega})",
        extras={"params": params},
    )


def initial(params: FpuParams, alpha: float):
    """Point excitation: alpha on the fourth coordinate, zero momenta."""
    n = 2 * params.half_count
    if n < 4:
        raise IndexOutOfRange("lattice too small for the stock initial condition (need M >= 2)")
    q0 = np.zeros(n)
    q0[3] = alpha
    return q0, np.zeros(n)
