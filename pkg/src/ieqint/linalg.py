"""Minimal linear-algebra kernel used by the integrators and the models.

Covers exactly what the schemes need: SPD factorisation computed once and
reused for every solve, O(N) rank-1 (Sherman-Morrison) solves, a
power-iteration estimate of the largest eigenvalue, and a thin wrapper for
sparse operators with transpose application. The model operators are banded
or Kronecker-structured, so CSR storage with a small-size dense fallback is
sufficient.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, NotPositiveDefinite, SingularUpdate

# Below this dimension sparse operators fall back to plain dense arrays.
DENSE_CUTOFF = 32


class OpCounter:
    """Running tally of scalar arithmetic operations, for cost assertions."""

    __slots__ = ("ops",)

    def __init__(self):
        self.ops = 0

    def add(self, n):
        self.ops += int(n)


class SparseOperator:
    """Real matrix with CSR (or small dense) storage and transpose apply."""

    def __init__(self, mat):
        if sp.issparse(mat):
            if min(mat.shape) < DENSE_CUTOFF:
                self._mat = mat.toarray()
            else:
                self._mat = mat.tocsr()
        else:
            self._mat = np.array(mat, dtype=float)
        self.shape = tuple(self._mat.shape)

    @property
    def mat(self):
        """Underlying dense array or CSR matrix (treat as read-only)."""
        return self._mat

    def apply(self, x):
        return self._mat @ x

    def apply_t(self, x):
        return self._mat.T @ x

    def __matmul__(self, x):
        return self._mat @ x

    def toarray(self):
        if sp.issparse(self._mat):
            return self._mat.toarray()
        return np.array(self._mat)


class FactorizationHandle:
    """Opaque factorisation of an SPD matrix, reusable for repeated solves.

    Solves are re-entrant; ``solve_count`` is bookkeeping for cost reports
    and is only meaningful for sequential use.
    """

    def __init__(self, n, solve_impl):
        self.n = n
        self._solve_impl = solve_impl
        self.solve_count = 0

    def solve(self, b):
        self.solve_count += 1
        return self._solve_impl(b)


def spd_factorize(a):
    """Factor a symmetric positive definite matrix once for repeated solves.

    Dense input goes through Cholesky. Sparse input goes through a
    diagonal-pivoted LU in symmetric mode, whose pivots are then checked for
    positivity, which for a symmetric matrix is equivalent to an LDL' test.

    Raises NotPositiveDefinite if a non-positive pivot is encountered.
    """
    if isinstance(a, SparseOperator):
        a = a.mat
    if sp.issparse(a):
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        n = a.shape[0]
        try:
            lu = spla.splu(
                a.tocsc(),
                diag_pivot_thresh=0.0,
                permc_spec="MMD_AT_PLUS_A",
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        if np.any(lu.U.diagonal() <= 0.0):
            raise NotPositiveDefinite("non-positive pivot in sparse factorisation")
        return FactorizationHandle(n, lu.solve)

    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    try:
        low = scipy.linalg.cholesky(a, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc

    def solve(b, low=low):
        y = scipy.linalg.solve_triangular(low, b, lower=True)
        return scipy.linalg.solve_triangular(low, y, lower=True, trans="T")

    return FactorizationHandle(a.shape[0], solve)


def sherman_morrison_solve(alpha, beta, b, ops=None):
    """Solve (I + alpha beta') x = b in O(N) via the rank-1 inverse identity.

    The denominator 1 + beta.alpha is strictly positive for the schemes'
    inputs (alpha = (k/2) M^-1 g, beta = (k/2) g with M SPD); a value near
    zero therefore signals a caller bug rather than an expected condition.
    """
    denom = 1.0 + float(beta @ alpha)
    if abs(denom) < 1e-14:
        raise SingularUpdate(f"1 + beta.alpha = {denom:.3e}")
    x = b - alpha * (float(beta @ b) / denom)
    if ops is not None:
        ops.add(6 * b.shape[0] + 2)  # two dot products, one scaled subtraction
    return x


def _as_apply(op, n):
    if isinstance(op, SparseOperator):
        return op.apply, op.shape[0]
    if isinstance(op, MassMatrix):
        return op.apply, op.n
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return (lambda x: op @ x), op.shape[0]
    if callable(op):
        if n is None:
            raise ValueError("dimension required for a callable operator")
        return op, int(n)
    raise TypeError(f"unsupported operator type {type(op)!r}")


def max_eig_sym(op, n=None, tol=1e-10, max_iter=100_000):
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Deterministic start vector of all ones; if that probe is annihilated
    (the operator has ones in its kernel), restarts from alternating signs.
    Stops when the Rayleigh quotient stagnates to within tol relative, so
    the returned value approaches the true maximum from below.
    """
    apply_, dim = _as_apply(op, n)
    x = np.ones(dim) / math.sqrt(dim)
    tried_alt = False
    lam_prev = None
    for _ in range(int(max_iter)):
        y = apply_(x)
        norm_y = float(np.linalg.norm(y))
        if norm_y <= 1e-300:
            if tried_alt:
                return 0.0
            x = np.ones(dim)
            x[1::2] = -1.0
            x /= math.sqrt(dim)
            tried_alt = True
            lam_prev = None
            continue
        lam = float(x @ y)
        x = y / norm_y
        if lam_prev is not None and abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300):
            return lam
        lam_prev = lam
    raise NoConvergence(f"power iteration did not settle within {max_iter} iterations")


class MassMatrix:
    """SPD mass matrix as a scalar multiple of identity, diagonal, or dense.

    Positivity is checked at construction (diagonal entries > 0, or the
    Cholesky factorisation succeeds); the factorisation is cached so that
    solves are cheap and re-entrant.
    """

    def __init__(self, kind, n, payload, chol=None):
        self.kind = kind
        self.n = int(n)
        self._payload = payload
        self._chol = chol

    @classmethod
    def identity(cls, n):
        return cls("scalar", n, 1.0)

    @classmethod
    def scalar(cls, value, n):
        value = float(value)
        if value <= 0.0:
            raise NotPositiveDefinite(f"scalar mass {value} is not positive")
        return cls("scalar", n, value)

    @classmethod
    def diagonal(cls, diag):
        diag = np.asarray(diag, dtype=float)
        if np.any(diag <= 0.0):
            raise NotPositiveDefinite("diagonal mass has non-positive entries")
        return cls("diagonal", diag.shape[0], diag)

    @classmethod
    def dense(cls, a):
        a = np.asarray(a, dtype=float)
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(a).max()))):
            raise ValueError("dense mass matrix must be symmetric")
        try:
            low = scipy.linalg.cholesky(a, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        return cls("dense", a.shape[0], a, chol=low)

    def apply(self, w):
        if self.kind == "scalar":
            return self._payload * w
        if self.kind == "diagonal":
            return self._payload * w
        return self._payload @ w

    def solve(self, b):
        if self.kind == "scalar":
            return b / self._payload
        if self.kind == "diagonal":
            return b / self._payload
        y = scipy.linalg.solve_triangular(self._chol, b, lower=True)
        return scipy.linalg.solve_triangular(self._chol, y, lower=True, trans="T")

    def eig_max(self):
        if self.kind == "scalar":
            return float(self._payload)
        if self.kind == "diagonal":
            return float(self._payload.max())
        return max_eig_sym(self._payload)

    # M = L L'; the two applications below give L^-1 b and L^-T b, used to
    # scale the split stiffness symmetrically.
    def inv_chol_apply(self, b):
        if self.kind == "scalar":
            return b / math.sqrt(self._payload)
        if self.kind == "diagonal":
            return b / np.sqrt(self._payload)
        return scipy.linalg.solve_triangular(self._chol, b, lower=True)

    def inv_chol_t_apply(self, b):
        if self.kind == "scalar":
            return b / math.sqrt(self._payload)
        if self.kind == "diagonal":
            return b / np.sqrt(self._payload)
        return scipy.linalg.solve_triangular(self._chol, b, lower=True, trans="T")

    def to_matrix(self, sparse=False):
        if self.kind == "scalar":
            if sparse:
                return self._payload * sp.identity(self.n, format="csr")
            return self._payload * np.eye(self.n)
        if self.kind == "diagonal":
            if sparse:
                return sp.diags(self._payload, format="csr")
            return np.diag(self._payload)
        if sparse:
            return sp.csr_matrix(self._payload)
        return np.array(self._payload)


def gershgorin_scaled_max(k_op, mass):
    """Cheap upper bound on lambda_max(M^-1/2 K M^-T/2) from Gershgorin rows.

    Only available for scalar/diagonal mass; returns inf otherwise.
    """
    if mass.kind == "dense":
        return math.inf
    kmat = k_op.mat if isinstance(k_op, SparseOperator) else k_op
    if sp.issparse(kmat):
        kabs = abs(kmat)
    else:
        kabs = np.abs(kmat)
    if mass.kind == "scalar":
        dinv = np.full(mass.n, 1.0 / math.sqrt(mass._payload))
    else:
        dinv = 1.0 / np.sqrt(mass._payload)
    rows = dinv * np.asarray(kabs @ dinv).ravel()
    return float(rows.max())
