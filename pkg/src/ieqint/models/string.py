"""Geometrically exact string: coupled transverse/longitudinal vibration
semi-discretised on a uniform grid with fixed ends.

State layout q = [u; v] with u transverse and v longitudinal, each of
length M-1 (interior points of an M-segment grid). The potential density
in the strain pair (zeta, eta) = (u_x, v_x) is

    W(zeta, eta) = T0 (zeta^2 + eta^2) / 2
                 + (EA - T0) (sqrt((1 + eta)^2 + zeta^2) - 1)^2 / 2,

which is non-negative whenever EA > T0 and splits naturally into the
tension-driven quadratic part plus a non-negative nonlinear remainder.
The stock parameter set is a C3 piano string; that configuration is run
with a large energy shift (eps = 1e8) regularising the auxiliary gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NewtonNoConvergence
from ..hamiltonian import HamiltonianSystem, SplitPotential
from ..linalg import MassMatrix, SparseOperator

# Energy shift used by the stock string configuration.
DEFAULT_SHIFT = 1.0e8


@dataclass(frozen=True)
class StringParams:
    rho: float = 7850.0  # kg/m^3
    area: float = 8.87e-7  # m^2
    length: float = 1.259  # m
    young: float = 2.02e11  # Pa
    tension: float = 759.0  # N
    segments: int = 50

    def __post_init__(self):
        if self.segments < 2:
            raise ValueError("need at least 2 segments")
        if self.young * self.area <= self.tension:
            raise ValueError("EA must exceed the tension")

    @property
    def h(self):
        return self.length / self.segments

    @property
    def ea(self):
        return self.young * self.area


def c3_params(segments=50):
    """Stock C3 piano string parameter set."""
    return StringParams(segments=segments)


def segments_from_dt(params: StringParams, dt: float):
    """Largest segment count whose spacing stays above 1.05 sqrt(E/rho) dt."""
    h_target = 1.05 * np.sqrt(params.young / params.rho) * dt
    return max(2, int(np.floor(params.length / h_target)))


def _d_minus(m, h):
    # (M x (M-1)) forward of the zero-extended interior: row l gives
    # (u_l - u_{l-1}) / h with u_0 = u_M = 0
    data, rows, cols = [], [], []
    for l in range(m):
        if l <= m - 2:
            rows.append(l)
            cols.append(l)
            data.append(1.0 / h)
        if l >= 1:
            rows.append(l)
            cols.append(l - 1)
            data.append(-1.0 / h)
    return sp.csr_matrix((data, (rows, cols)), shape=(m, m - 1))


def build(params: StringParams) -> HamiltonianSystem:
    m = params.segments
    h = params.h
    n = 2 * (m - 1)
    t0 = params.tension
    stiff = params.ea - params.tension  # EA - T0 > 0

    dm = _d_minus(m, h)
    dmt = dm.T.tocsr()
    lap = (dmt @ dm).tocsr()  # = -D2, SPD
    k_mat = t0 * h * sp.block_diag([lap, lap], format="csr")

    def strains(q):
        return dm @ q[: m - 1], dm @ q[m - 1 :]

    def stretch(zeta, eta):
        return np.sqrt((1.0 + eta) ** 2 + zeta**2)

    def density(zeta, eta):
        s = stretch(zeta, eta)
        return 0.5 * t0 * (zeta**2 + eta**2) + 0.5 * stiff * (s - 1.0) ** 2

    def density_alt(zeta, eta):
        # equivalent elastic form, used only as a cross-check
        s = stretch(zeta, eta)
        return 0.5 * params.ea * (zeta**2 + eta**2) - stiff * (s - 1.0 - eta)

    def partials(zeta, eta):
        s = stretch(zeta, eta)
        dz = t0 * zeta + stiff * (s - 1.0) * zeta / s
        de = t0 * eta + stiff * (s - 1.0) * (1.0 + eta) / s
        return dz, de

    def residual_partials(zeta, eta):
        s = stretch(zeta, eta)
        dz = stiff * (s - 1.0) * zeta / s
        de = stiff * (s - 1.0) * (1.0 + eta) / s
        return dz, de

    def potential(q):
        zeta, eta = strains(q)
        return h * float(np.sum(density(zeta, eta)))

    def gradient(q):
        zeta, eta = strains(q)
        dz, de = partials(zeta, eta)
        return np.concatenate([h * (dmt @ dz), h * (dmt @ de)])

    def value_and_grad(q):
        zeta, eta = strains(q)
        value = h * float(np.sum(density(zeta, eta)))
        dz, de = partials(zeta, eta)
        return value, np.concatenate([h * (dmt @ dz), h * (dmt @ de)])

    def residual(q):
        zeta, eta = strains(q)
        s = stretch(zeta, eta)
        return 0.5 * h * stiff * float(np.sum((s - 1.0) ** 2))

    def residual_gradient(q):
        zeta, eta = strains(q)
        dz, de = residual_partials(zeta, eta)
        return np.concatenate([h * (dmt @ dz), h * (dmt @ de)])

    def residual_value_and_grad(q):
        zeta, eta = strains(q)
        s = stretch(zeta, eta)
        value = 0.5 * h * stiff * float(np.sum((s - 1.0) ** 2))
        dz = stiff * (s - 1.0) * zeta / s
        de = stiff * (s - 1.0) * (1.0 + eta) / s
        return value, np.concatenate([h * (dmt @ dz), h * (dmt @ de)])

    probe = max(1, min(m - 1, round(m / 2))) - 1  # u nearest the string midpoint

    return HamiltonianSystem(
        n=n,
        mass=MassMatrix.scalar(params.rho * params.area * h, n),
        potential=potential,
        gradient=gradient,
        value_and_grad=value_and_grad,
        split=SplitPotential(
            k_op=SparseOperator(k_mat),
            residual=residual,
            residual_gradient=residual_gradient,
            residual_value_and_grad=residual_value_and_grad,
        ),
        probe_default=probe,
        label=f"string(M={m})",
        baselines={"string_implicit": ImplicitStringStepper(params, dm)},
        extras={
            "params": params,
            "h": h,
            "d_minus": dm,
            "density": density,
            "density_alt": density_alt,
            "partials": partials,
        },
    )


def initial(params: StringParams, alpha: float):
    """First transverse mode shape u = alpha sqrt(A) sin(pi x / L), v = 0."""
    m = params.segments
    x = np.arange(1, m) * params.h
    u = alpha * np.sqrt(params.area) * np.sin(np.pi * x / params.length)
    q0 = np.concatenate([u, np.zeros(m - 1)])
    return q0, np.zeros(2 * (m - 1))


class ImplicitStringStepper:
    """Fully implicit discrete-gradient update solved by Newton-Raphson.

    The strain-quotient gradients couple the new level to the one two steps
    back, with the other strain held at the middle level, so the transverse
    and longitudinal blocks decouple and each Newton iteration solves two
    tridiagonal (M-1)-systems. Exactly conservative (up to the Newton
    tolerance) and unconditionally stable; serves as the slow baseline for
    timing comparisons.
    """

    def __init__(self, params, dm):
        self.params = params
        self.dm = dm
        self.dmt = dm.T.tocsr()
        self.stats = {}
        self.reset_stats()

    def reset_stats(self):
        self.stats = {"linear_solves": 0, "newton_iters": 0}

    # -- potential density helpers -------------------------------------
    def _dens(self, zeta, eta):
        s = np.sqrt((1.0 + eta) ** 2 + zeta**2)
        t0, stiff = self.params.tension, self.params.ea - self.params.tension
        return 0.5 * t0 * (zeta**2 + eta**2) + 0.5 * stiff * (s - 1.0) ** 2

    # Discrete gradients (W(z1) - W(z0)) / (z1 - z0) in the algebraically
    # cancelled form: the strain increment divides out exactly, so there is
    # no 0/0 and no rounding amplification near turning points; at z1 = z0
    # the expressions reduce to the analytic partials.
    def _quot_zeta(self, z1, z0, eta):
        t0, stiff = self.params.tension, self.params.ea - self.params.tension
        s1 = np.sqrt((1.0 + eta) ** 2 + z1**2)
        s0 = np.sqrt((1.0 + eta) ** 2 + z0**2)
        return 0.5 * t0 * (z1 + z0) + 0.5 * stiff * (s1 + s0 - 2.0) * (z1 + z0) / (s1 + s0)

    def _quot_zeta_deriv(self, z1, z0, eta):
        t0, stiff = self.params.tension, self.params.ea - self.params.tension
        s1 = np.sqrt((1.0 + eta) ** 2 + z1**2)
        s0 = np.sqrt((1.0 + eta) ** 2 + z0**2)
        ssum = s1 + s0
        ds1 = z1 / s1
        return 0.5 * t0 + 0.5 * stiff * (
            ds1 * (z1 + z0) / ssum
            + (ssum - 2.0) / ssum
            - (ssum - 2.0) * (z1 + z0) * ds1 / ssum**2
        )

    def _quot_eta(self, e1, e0, zeta):
        t0, stiff = self.params.tension, self.params.ea - self.params.tension
        s1 = np.sqrt((1.0 + e1) ** 2 + zeta**2)
        s0 = np.sqrt((1.0 + e0) ** 2 + zeta**2)
        return 0.5 * t0 * (e1 + e0) + 0.5 * stiff * (s1 + s0 - 2.0) * (2.0 + e1 + e0) / (s1 + s0)

    def _quot_eta_deriv(self, e1, e0, zeta):
        t0, stiff = self.params.tension, self.params.ea - self.params.tension
        s1 = np.sqrt((1.0 + e1) ** 2 + zeta**2)
        s0 = np.sqrt((1.0 + e0) ** 2 + zeta**2)
        ssum = s1 + s0
        ds1 = (1.0 + e1) / s1
        return 0.5 * t0 + 0.5 * stiff * (
            ds1 * (2.0 + e1 + e0) / ssum
            + (ssum - 2.0) / ssum
            - (ssum - 2.0) * (2.0 + e1 + e0) * ds1 / ssum**2
        )

    # -- driver protocol ------------------------------------------------
    def init(self, q0, p0, k, config=None):
        m = self.params.segments
        mass = self.params.rho * self.params.area * self.params.h
        zeta, eta = self.dm @ q0[: m - 1], self.dm @ q0[m - 1 :]
        # collapsed quotients at equal levels are the analytic partials
        grad = self.params.h * np.concatenate(
            [self.dmt @ self._quot_zeta(zeta, zeta, eta), self.dmt @ self._quot_eta(eta, eta, zeta)]
        )
        q1 = q0 + (k / mass) * p0 - (0.5 * k * k / mass) * grad
        return SimpleNamespace(q=q1, q_prev=q0.copy())

    def snapshot(self, state):
        return (state.q.copy(), state.q_prev.copy())

    def step(self, state, k, config):
        m = self.params.segments
        u_cur, v_cur = state.q[: m - 1], state.q[m - 1 :]
        u_prev, v_prev = state.q_prev[: m - 1], state.q_prev[m - 1 :]
        zeta_cur, eta_cur = self.dm @ u_cur, self.dm @ v_cur
        zeta_prev, eta_prev = self.dm @ u_prev, self.dm @ v_prev

        u_new = self._solve_block(
            u_cur, u_prev, zeta_prev, k, config,
            quot=lambda z: self._quot_zeta(z, zeta_prev, eta_cur),
            quot_deriv=lambda z: self._quot_zeta_deriv(z, zeta_prev, eta_cur),
        )
        v_new = self._solve_block(
            v_cur, v_prev, eta_prev, k, config,
            quot=lambda e: self._quot_eta(e, eta_prev, zeta_cur),
            quot_deriv=lambda e: self._quot_eta_deriv(e, eta_prev, zeta_cur),
        )
        return SimpleNamespace(q=np.concatenate([u_new, v_new]), q_prev=state.q.copy())

    def _solve_block(self, w_cur, w_prev, strain_prev, k, config, quot, quot_deriv):
        rho_a = self.params.rho * self.params.area
        coeff = k * k / rho_a
        tol = config.newton_tol if config is not None else 1e-13
        max_iter = config.newton_max_iter if config is not None else 20

        def block_residual(w):
            strain_new = self.dm @ w
            return w - 2.0 * w_cur + w_prev + coeff * (self.dmt @ quot(strain_new)), strain_new

        # explicit predictor: discrete gradient collapsed at the current level
        w = 2.0 * w_cur - w_prev - coeff * (self.dmt @ quot(self.dm @ w_cur))
        res, strain_new = block_residual(w)
        res_norm = float(np.linalg.norm(res))
        for _ in range(max_iter):
            if res_norm <= tol * (1.0 + float(np.linalg.norm(w))):
                self.stats["newton_iters"] += 1
                return w
            jac = sp.identity(w.shape[0], format="csr") + coeff * (
                self.dmt @ sp.diags(quot_deriv(strain_new)) @ self.dm
            )
            delta = spla.spsolve(jac.tocsc(), res)
            self.stats["linear_solves"] += 1
            self.stats["newton_iters"] += 1
            # backtracking keeps the iteration from bouncing when the
            # predictor lands far from the solution
            scale = 1.0
            for _ in range(30):
                w_try = w - scale * delta
                res_try, strain_try = block_residual(w_try)
                res_try_norm = float(np.linalg.norm(res_try))
                if res_try_norm < res_norm:
                    break
                scale *= 0.5
            else:
                raise NewtonNoConvergence("Newton line search stalled")
            w, res, strain_new, res_norm = w_try, res_try, strain_try, res_try_norm
        if res_norm <= tol * (1.0 + float(np.linalg.norm(w))):
            return w
        raise NewtonNoConvergence(f"Newton did not reach tol {tol} in {max_iter} iterations")

    def energy(self, state, k):
        """Conserved two-level energy of the discrete-gradient update."""
        m = self.params.segments
        h = self.params.h
        rho_a = self.params.rho * self.params.area
        dq = state.q - state.q_prev
        kinetic = 0.5 * rho_a * h * float(dq @ dq) / (k * k)
        zeta_cur, eta_cur = self.dm @ state.q[: m - 1], self.dm @ state.q[m - 1 :]
        zeta_prev = self.dm @ state.q_prev[: m - 1]
        eta_prev = self.dm @ state.q_prev[m - 1 :]
        cross = 0.5 * h * float(
            np.sum(self._dens(zeta_cur, eta_prev) + self._dens(zeta_prev, eta_cur))
        )
        return kinetic + cross


def string_implicit_step(params, state, k, tol=1e-13, max_iter=20):
    """One implicit discrete-gradient step on a (q, q_prev) state pair."""
    stepper = ImplicitStringStepper(params, _d_minus(params.segments, params.h))
    config = SimpleNamespace(newton_tol=tol, newton_max_iter=max_iter)
    return stepper.step(state, k, config)
