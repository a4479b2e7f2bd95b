"""Separable Hamiltonian systems H = p' M^-1 p / 2 + V(q) with V >= 0.

Systems optionally carry a split V = q' K q / 2 + V' with K symmetric PSD
and V' >= 0, and support the square-root energy substitution
psi = sqrt(2 (V + eps)) with its auxiliary gradient g = grad V / psi. A
built system is immutable and may be shared across concurrent simulations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np

from .errors import DegeneratePotential, DimensionMismatch, NegativePotential
from .linalg import MassMatrix, SparseOperator


@dataclass(frozen=True)
class SplitPotential:
    """Quadratic/nonlinear splitting of the potential energy.

    ``k_op`` is the symmetric PSD stiffness of the quadratic part;
    ``residual`` evaluates the non-negative remainder V' and
    ``residual_gradient`` its gradient. ``residual_value_and_grad`` is an
    optional fused evaluator for models where value and gradient share work.
    """

    k_op: SparseOperator
    residual: Callable[[np.ndarray], float]
    residual_gradient: Callable[[np.ndarray], np.ndarray]
    residual_value_and_grad: Optional[Callable] = None

    def value_and_grad(self, q):
        if self.residual_value_and_grad is not None:
            return self.residual_value_and_grad(q)
        return self.residual(q), self.residual_gradient(q)


@dataclass(frozen=True)
class HamiltonianSystem:
    """Dimension, mass matrix, potential evaluators and optional split.

    ``value_and_grad`` fuses potential and gradient when both are needed
    from one state (the conservative steppers call it exactly once per
    step). ``baselines`` holds model-specific reference steppers keyed by
    scheme name; ``extras`` exposes model internals for diagnostics.
    """

    n: int
    mass: MassMatrix
    potential: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    value_and_grad: Optional[Callable] = None
    split: Optional[SplitPotential] = None
    probe_default: int = 0
    label: str = ""
    baselines: Mapping[str, Any] = field(default_factory=dict)
    extras: Mapping[str, Any] = field(default_factory=dict)

    def potential_pair(self, q, use_split=False):
        """(value, gradient) of V, or of the split residual V'."""
        if use_split:
            if self.split is None:
                from .errors import NoSplit

                raise NoSplit("system has no split potential")
            return self.split.value_and_grad(q)
        if self.value_and_grad is not None:
            return self.value_and_grad(q)
        return self.potential(q), self.gradient(q)


@dataclass
class StateVector:
    """Interleaved integrator state: q at integer steps, p and psi at half
    steps. ``psi`` stays None for schemes that do not carry it."""

    q: np.ndarray
    p: Optional[np.ndarray] = None
    psi: Optional[float] = None
    step_index: int = 0
    dt: float = 0.0


def _check_dim(sys, vec, name):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (sys.n,):
        raise DimensionMismatch(f"{name} has shape {vec.shape}, expected ({sys.n},)")
    return vec


def energy_continuous(sys, q, p):
    """H(p, q) = p' M^-1 p / 2 + V(q)."""
    q = _check_dim(sys, q, "q")
    p = _check_dim(sys, p, "p")
    return 0.5 * float(p @ sys.mass.solve(p)) + float(sys.potential(q))


def quadratise(sys, q, eps=0.0, use_split=False):
    """psi = sqrt(2 (V(q) + eps)), with V' in place of V when use_split."""
    if use_split:
        value = float(sys.split.residual(q)) if sys.split else _no_split()
    else:
        value = float(sys.potential(q))
    shifted = value + eps
    if shifted < 0.0:
        raise NegativePotential(f"V + eps = {shifted:.3e} < 0")
    return np.sqrt(2.0 * shifted)


def _no_split():
    from .errors import NoSplit

    raise NoSplit("system has no split potential")


def aux_gradient_from_pair(value, grad, eps):
    """g = grad / sqrt(2 (value + eps)) with the smooth-minimum convention.

    For smooth non-negative potentials a zero of V forces a zero gradient,
    so g = 0 whenever the gradient vanishes, regardless of V + eps. A
    vanishing V + eps with a non-zero gradient means the caller must
    regularise (eps > 0).
    """
    if not np.any(grad):
        return np.zeros_like(grad)
    shifted = float(value) + eps
    if shifted < 0.0:
        raise NegativePotential(f"V + eps = {shifted:.3e} < 0")
    if shifted <= 1e-300:
        raise DegeneratePotential("V + eps vanished with a non-zero gradient; set eps > 0")
    return grad / np.sqrt(2.0 * shifted)


def aux_gradient(sys, q, eps=0.0, use_split=False):
    """g = grad V / sqrt(2 (V + eps)) (split residual variant on request)."""
    value, grad = sys.potential_pair(q, use_split=use_split)
    return aux_gradient_from_pair(value, grad, eps)


def momentum_bound(sys, h0):
    """sqrt(2 lambda_max(M) H0): bound on ||p|| along any trajectory."""
    return float(np.sqrt(2.0 * sys.mass.eig_max() * h0))
