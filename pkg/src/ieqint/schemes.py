"""Time-stepping schemes on the staggered grid (q at integer steps, momentum
and the auxiliary energy variable at half steps), their conserved energies,
stability bounds, and the sequential simulation driver.

Schemes:
  sv            explicit two-step (Stormer-Verlet)
  marazzato     free-flight averaged-force scheme with quadrature
  ieq           explicit energy-quadratised scheme, unconditionally stable
  ieq_split     variant with the quadratic stiffness stepped directly,
                conditionally stable
  ieq_variable  energy-quadratised scheme on a prescribed step sequence
Model-specific implicit baselines are attached to the systems that support
them and dispatched by name.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, Diverged, DimensionMismatch, NoSplit
from .hamiltonian import (
    HamiltonianSystem,
    aux_gradient_from_pair,
    energy_continuous,
    momentum_bound,
)
from .linalg import (
    NotPositiveDefinite,
    gershgorin_scaled_max,
    max_eig_sym,
    sherman_morrison_solve,
    spd_factorize,
)

GENERIC_SCHEMES = ("sv", "marazzato", "ieq", "ieq_split", "ieq_variable")

# Growth factor treated as unambiguous blow-up when no momentum bound applies
# (split scheme run beyond its stability limit).
BLOWUP_FACTOR = 1e8


@dataclass
class SchemeConfig:
    """Scheme selection and stepping parameters for one simulation."""

    scheme: str
    dt: float = 0.0
    dt_sequence: Optional[tuple] = None
    eps: float = 0.0
    quad_nodes: int = 4
    divergence_threshold: float = 10.0
    allow_unstable: bool = False
    newton_tol: float = 1e-13
    newton_max_iter: int = 20

    def validate(self):
        if self.scheme == "ieq_variable":
            seq = self.dt_sequence if self.dt_sequence else (self.dt,)
            if not seq or any(k <= 0.0 for k in seq):
                raise ConfigError("dt_sequence entries must be positive")
        elif self.dt <= 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.quad_nodes < 1:
            raise ConfigError("quad_nodes must be >= 1")
        if self.divergence_threshold <= 0.0:
            raise ConfigError("divergence_threshold must be positive")


@dataclass
class EnergySample:
    step: int
    h: float
    h_rel: float


# ---------------------------------------------------------------------------
# step kernels
# ---------------------------------------------------------------------------


def sv_init(sys, q0, p0, k):
    """Taylor initialisation q0, q1 = q0 + k M^-1 p0 for two-step schemes."""
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if q0.shape != (sys.n,) or p0.shape != (sys.n,):
        raise DimensionMismatch("initial state does not match system dimension")
    return q0.copy(), q0 + k * sys.mass.solve(p0)


def sv_init_kicked(sys, q0, p0, k):
    """Start with the acceleration term included:
    q1 = q0 + k M^-1 p0 - (k^2/2) M^-1 grad V(q0).

    The bare Taylor start encodes the half-step momentum p0 instead of
    p(k/2), an O(k) offset whenever grad V(q0) != 0, which caps trajectory
    convergence at first order. This start restores global second order;
    the simulation driver uses it for every two-step scheme. Costs one
    gradient evaluation.
    """
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if q0.shape != (sys.n,) or p0.shape != (sys.n,):
        raise DimensionMismatch("initial state does not match system dimension")
    q1 = q0 + k * sys.mass.solve(p0) - (0.5 * k * k) * sys.mass.solve(sys.gradient(q0))
    return q0.copy(), q1


def sv_step(sys, q_n, q_nm1, k):
    """q_{n+1} = 2 q_n - q_{n-1} - k^2 M^-1 grad V(q_n); one gradient eval."""
    q_np1 = 2.0 * q_n - q_nm1 - (k * k) * sys.mass.solve(sys.gradient(q_n))
    if not np.all(np.isfinite(q_np1)):
        raise Diverged(-1, "non-finite state in explicit two-step update")
    return q_np1


_GAUSS_CACHE = {}


def _gauss_rule(nodes):
    if nodes not in _GAUSS_CACHE:
        _GAUSS_CACHE[nodes] = np.polynomial.legendre.leggauss(nodes)
    return _GAUSS_CACHE[nodes]


def marazzato_step(sys, q_n, p_mhalf, p_phalf, k, quad_nodes=4):
    """Advance the free-flight averaged-force scheme by one step.

    q_{n+1} = q_n + k M^-1 p_{n+1/2};
    p_{n+3/2} = p_{n-1/2} - 2 * integral over [n k, (n+1) k] of grad V along
    the free flight from q_n with velocity M^-1 p_{n+1/2}. The integral is
    approximated by Gauss-Legendre quadrature with quad_nodes points, which
    costs quad_nodes gradient evaluations.
    """
    vel = sys.mass.solve(p_phalf)
    xs, ws = _gauss_rule(quad_nodes)
    integral = np.zeros_like(q_n)
    for xi, wi in zip(xs, ws):
        t_loc = 0.5 * k * (xi + 1.0)
        integral += wi * sys.gradient(q_n + t_loc * vel)
    integral *= 0.5 * k
    q_np1 = q_n + k * vel
    p_3half = p_mhalf - 2.0 * integral
    if not (np.all(np.isfinite(q_np1)) and np.all(np.isfinite(p_3half))):
        raise Diverged(-1, "non-finite state in averaged-force update")
    return q_np1, p_3half


def marazzato_energy(sys, p_phalf, p_mhalf, q_n):
    """H_n = p_{n+1/2}' M^-1 p_{n-1/2} / 2 + V(q_n); may be negative."""
    return 0.5 * float(p_phalf @ sys.mass.solve(p_mhalf)) + float(sys.potential(q_n))


def psi_init(sys, q0, p0, k, eps=0.0, use_split=False):
    """Second-order initialisation of the auxiliary variable at t = k/2."""
    value, grad = sys.potential_pair(q0, use_split=use_split)
    psi0 = np.sqrt(2.0 * (float(value) + eps))
    if not np.any(grad):
        return float(psi0)
    if float(value) + eps <= 1e-300:
        from .errors import DegeneratePotential

        raise DegeneratePotential("cannot initialise psi: V + eps = 0 with non-zero gradient")
    return float(psi0 + (k / (2.0 * psi0)) * float(grad @ sys.mass.solve(p0)))


def ieq_step(sys, q_n, q_nm1, psi_mhalf, k, eps=0.0, ops=None):
    """One step of the explicit energy-quadratised scheme.

    Builds g at q_n (one fused potential/gradient evaluation), forms the
    rank-1 update and solves it in closed form. Returns
    (q_{n+1}, psi_{n+1/2}, p_{n+1/2}); the momentum is reconstructed as
    M (q_{n+1} - q_n) / k.
    """
    value, grad = sys.potential_pair(q_n, use_split=False)
    g = aux_gradient_from_pair(value, grad, eps)
    alpha = (0.5 * k) * sys.mass.solve(g)
    beta = (0.5 * k) * g
    b = 2.0 * q_n - (2.0 * k * psi_mhalf) * alpha - q_nm1 + alpha * float(beta @ q_nm1)
    q_np1 = sherman_morrison_solve(alpha, beta, b, ops=ops)
    psi_phalf = psi_mhalf + 0.5 * float(g @ (q_np1 - q_nm1))
    p_phalf = sys.mass.apply((q_np1 - q_n) / k)
    if ops is not None:
        ops.add(15 * q_n.shape[0])  # alpha/beta/b assembly, psi and p updates
    return q_np1, float(psi_phalf), p_phalf


def ieq_split_step(sys, q_n, q_nm1, psi_mhalf, k, eps=0.0, ops=None):
    """Split variant: the stiffness term enters the update directly and g is
    built from the residual potential V'."""
    if sys.split is None:
        raise NoSplit("split scheme requires a split potential")
    value, grad = sys.potential_pair(q_n, use_split=True)
    g = aux_gradient_from_pair(value, grad, eps)
    alpha = (0.5 * k) * sys.mass.solve(g)
    beta = (0.5 * k) * g
    b = (
        2.0 * q_n
        - (k * k) * sys.mass.solve(sys.split.k_op @ q_n)
        - (2.0 * k * psi_mhalf) * alpha
        - q_nm1
        + alpha * float(beta @ q_nm1)
    )
    q_np1 = sherman_morrison_solve(alpha, beta, b, ops=ops)
    psi_phalf = psi_mhalf + 0.5 * float(g @ (q_np1 - q_nm1))
    p_phalf = sys.mass.apply((q_np1 - q_n) / k)
    if ops is not None:
        ops.add(17 * q_n.shape[0])
    return q_np1, float(psi_phalf), p_phalf


def ieq_variable_step(sys, q_n, p_mhalf, psi_mhalf, k_n, k_phalf, eps=0.0):
    """Variable-step energy-quadratised update.

    The p and psi updates use the half-interval k_n = t_{n+1/2} - t_{n-1/2},
    the q update the full interval k_{n+1/2} = t_{n+1} - t_n. Eliminating
    p_{n+1/2} leaves a scalar equation whose denominator 1 + c is the same
    rank-1 quantity as in the constant-step scheme; the update is therefore
    explicit, O(N), and conserves p' M^-1 p / 2 + psi^2 / 2 exactly for any
    choice of step sequence.
    """
    value, grad = sys.potential_pair(q_n, use_split=False)
    g = aux_gradient_from_pair(value, grad, eps)
    w = sys.mass.solve(g)
    c = 0.25 * k_n * k_n * float(g @ w)
    psi_phalf = ((1.0 - c) * psi_mhalf + k_n * float(w @ p_mhalf)) / (1.0 + c)
    p_phalf = p_mhalf - (0.5 * k_n * (psi_phalf + psi_mhalf)) * g
    q_np1 = q_n + k_phalf * sys.mass.solve(p_phalf)
    return q_np1, p_phalf, float(psi_phalf)


def ieq_energy(sys, p_phalf, psi_phalf, q_pair=None):
    """Conserved half-step energy of the energy-quadratised schemes.

    Non-split: p' M^-1 p / 2 + psi^2 / 2, non-negative by construction.
    Split (pass q_pair = (q_{n+1}, q_n)): adds q_{n+1}' K q_n / 2, which has
    indefinite sign.
    """
    h = 0.5 * float(p_phalf @ sys.mass.solve(p_phalf)) + 0.5 * psi_phalf * psi_phalf
    if q_pair is not None:
        if sys.split is None:
            raise NoSplit("split energy requires a split potential")
        q_np1, q_n = q_pair
        h += 0.5 * float(q_np1 @ (sys.split.k_op @ q_n))
    return h


def max_stable_dt(sys):
    """Largest stable step of the split scheme: 2 / sqrt(lambda_max(S)) with
    S = M^-1/2 K M^-T/2 estimated by power iteration."""
    if sys.split is None:
        raise NoSplit("stability bound requires a split potential")
    mass = sys.mass
    k_op = sys.split.k_op

    def scaled(v):
        return mass.inv_chol_apply(k_op @ mass.inv_chol_t_apply(v))

    lam = max_eig_sym(scaled, n=sys.n)
    if lam <= 0.0:
        return math.inf
    return 2.0 / math.sqrt(lam)


def split_step_stable(sys, k):
    """Exact test of the split stability bound without an eigensolve.

    k <= 2 / sqrt(lambda_max(M^-1/2 K M^-T/2)) holds iff (4/k^2) M - K is
    positive semi-definite, which a single factorisation attempt decides.
    """
    if sys.split is None:
        raise NoSplit("stability test requires a split potential")
    kmat = sys.split.k_op.mat
    want_sparse = sp.issparse(kmat)
    mmat = sys.mass.to_matrix(sparse=want_sparse)
    gate = (4.0 / (k * k)) * mmat - kmat
    try:
        spd_factorize(gate)
    except NotPositiveDefinite:
        return False
    return True


# ---------------------------------------------------------------------------
# simulation driver
# ---------------------------------------------------------------------------


class _EvalCounts:
    __slots__ = ("gradient", "potential")

    def __init__(self):
        self.gradient = 0
        self.potential = 0


def _counting_system(system):
    """Shallow copy of the system whose evaluators bump per-run counters;
    the shared original stays untouched."""
    counts = _EvalCounts()

    def wrap_pot(f):
        def inner(q):
            counts.potential += 1
            return f(q)

        return inner

    def wrap_grad(f):
        def inner(q):
            counts.gradient += 1
            return f(q)

        return inner

    kwargs = {
        "potential": wrap_pot(system.potential),
        "gradient": wrap_grad(system.gradient),
    }
    if system.value_and_grad is not None:
        kwargs["value_and_grad"] = wrap_grad(system.value_and_grad)
    if system.split is not None:
        split_kwargs = {
            "residual": wrap_pot(system.split.residual),
            "residual_gradient": wrap_grad(system.split.residual_gradient),
        }
        if system.split.residual_value_and_grad is not None:
            split_kwargs["residual_value_and_grad"] = wrap_grad(
                system.split.residual_value_and_grad
            )
        kwargs["split"] = dataclasses.replace(system.split, **split_kwargs)
    return dataclasses.replace(system, **kwargs), counts


@dataclass
class TrajectoryRecord:
    """Per-step probe samples, energy trace and cost counters of one run."""

    scheme: str
    dt: float
    steps: int
    probe_index: int
    t: np.ndarray
    probe_q: np.ndarray
    probe_p: np.ndarray
    energy: np.ndarray
    energy_rel: np.ndarray
    h_ref: float
    kernel_steps: int = 0
    grad_evals_init: int = 0
    grad_evals: int = 0
    potential_evals: int = 0
    linear_solves: int = 0
    wall_time: float = 0.0
    diverged: bool = False
    diverged_step: Optional[int] = None
    states: Optional[list] = None
    final_state: Optional[tuple] = None

    @property
    def rows(self):
        return self.t.shape[0]

    def max_h_rel(self):
        return float(np.max(np.abs(self.energy_rel))) if self.rows else 0.0

    def grad_evals_per_step(self):
        return self.grad_evals / self.kernel_steps if self.kernel_steps else 0.0

    def samples(self):
        for i in range(self.rows):
            yield EnergySample(i, float(self.energy[i]), float(self.energy_rel[i]))


class _Recorder:
    def __init__(self, steps):
        self.t = np.zeros(steps + 1)
        self.probe_q = np.zeros(steps + 1)
        self.probe_p = np.zeros(steps + 1)
        self.energy = np.zeros(steps + 1)
        self.energy_rel = np.zeros(steps + 1)
        self.count = 0

    def push(self, t, pq, pp, h, h_ref):
        i = self.count
        self.t[i] = t
        self.probe_q[i] = pq
        self.probe_p[i] = pp
        self.energy[i] = h
        self.energy_rel[i] = (h - h_ref) / h_ref if h_ref != 0.0 else h - h_ref
        self.count += 1

    def truncate(self):
        n = self.count
        self.t = self.t[:n]
        self.probe_q = self.probe_q[:n]
        self.probe_p = self.probe_p[:n]
        self.energy = self.energy[:n]
        self.energy_rel = self.energy_rel[:n]


class _DivergenceMonitor:
    """Finite-value and momentum-growth watchdog.

    The momentum limit is threshold times the bound sqrt(2 lambda_max(M) H)
    implied by the conserved energy. For the conditionally stable split
    scheme (and the explicit two-step scheme on a split system) the
    guaranteed bound degrades by 1/sqrt(1 - (k/k_max)^2) near the stability
    edge; a Gershgorin estimate of k_max supplies that correction. Past the
    stability edge no bound exists and only unambiguous blow-up (a fixed
    factor of 1e8) or non-finite values end the run.
    """

    def __init__(self, system, scheme, k, h_ref, threshold):
        base = momentum_bound(system, max(h_ref, 0.0))
        factor = 1.0
        relaxed = False
        if scheme in ("sv", "ieq_split") and system.split is not None:
            lam_g = gershgorin_scaled_max(system.split.k_op, system.mass)
            r2 = 0.25 * k * k * lam_g if math.isfinite(lam_g) else math.inf
            if r2 < 1.0:
                factor = 1.0 / math.sqrt(1.0 - r2)
            else:
                relaxed = True
        if base == 0.0:
            self.limit = math.inf
        elif relaxed:
            self.limit = BLOWUP_FACTOR * base
        else:
            self.limit = threshold * factor * base

    def check(self, step, q, p=None):
        if not np.all(np.isfinite(q)):
            raise Diverged(step, f"non-finite coordinates at step {step}")
        if p is not None:
            if not np.all(np.isfinite(p)):
                raise Diverged(step, f"non-finite momentum at step {step}")
            if float(np.linalg.norm(p)) > self.limit:
                raise Diverged(step, f"momentum exceeded divergence limit at step {step}")


def _resolve_steps(config, steps, duration):
    if steps is not None:
        return int(steps)
    if duration is None:
        raise ConfigError("either steps or duration must be given")
    if config.scheme == "ieq_variable" and config.dt_sequence:
        seq = config.dt_sequence
        t, n = 0.0, 0
        while t < duration - 1e-12:
            t += seq[n % len(seq)]
            n += 1
        return n
    return int(round(duration / config.dt))


def simulate(system, config, q0, p0, probe=None, steps=None, duration=None, store_states=False):
    """Run one simulation and return its trajectory record.

    The record holds rows 0..steps: row j carries t_j, the probed
    coordinate of q^j, the probed transition momentum p^{j-1/2}, the
    scheme's energy and its relative deviation from the initial value. On
    divergence the record is truncated at the last completed step and
    flagged. The stepping loop is strictly sequential; the system itself is
    shared read-only.
    """
    config.validate()
    scheme = config.scheme
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if q0.shape != (system.n,) or p0.shape != (system.n,):
        raise DimensionMismatch("initial state does not match system dimension")
    probe = system.probe_default if probe is None else int(probe)
    if not 0 <= probe < system.n:
        raise ConfigError(f"probe index {probe} outside [0, {system.n})")
    steps = _resolve_steps(config, steps, duration)
    if steps < 1:
        raise ConfigError("run must take at least one step")

    if scheme in system.baselines:
        return _run_baseline(system, config, q0, p0, probe, steps, store_states)
    if scheme not in GENERIC_SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if scheme == "ieq_split":
        if system.split is None:
            raise NoSplit("ieq_split requires a model with a split potential")
        if not config.allow_unstable and not split_step_stable(system, config.dt):
            raise ConfigError(
                f"dt = {config.dt} exceeds the split stability bound; "
                "set allow_unstable to run anyway"
            )

    counted, counts = _counting_system(system)
    runner = {
        "sv": _run_sv,
        "marazzato": _run_marazzato,
        "ieq": _run_ieq,
        "ieq_split": _run_ieq,
        "ieq_variable": _run_variable,
    }[scheme]
    return runner(system, counted, counts, config, q0, p0, probe, steps, store_states)


def _new_record(scheme, k, steps, probe):
    return TrajectoryRecord(
        scheme=scheme,
        dt=k,
        steps=steps,
        probe_index=probe,
        t=np.zeros(0),
        probe_q=np.zeros(0),
        probe_p=np.zeros(0),
        energy=np.zeros(0),
        energy_rel=np.zeros(0),
        h_ref=0.0,
    )


def _finish(record, rec, counts, init_grad, wall, diverged=None):
    rec.truncate()
    record.t = rec.t
    record.probe_q = rec.probe_q
    record.probe_p = rec.probe_p
    record.energy = rec.energy
    record.energy_rel = rec.energy_rel
    record.grad_evals_init = init_grad
    record.grad_evals = counts.gradient - init_grad
    record.potential_evals = counts.potential
    record.wall_time = wall
    if diverged is not None:
        record.diverged = True
        record.diverged_step = diverged.step
    return record


def _run_sv(system, counted, counts, config, q0, p0, probe, steps, store_states):
    k = config.dt
    t0 = time.perf_counter()
    q_prev, q_cur = sv_init_kicked(counted, q0, p0, k)
    pot_prev = float(counted.potential(q_prev))
    pot_cur = float(counted.potential(q_cur))
    p_half = system.mass.apply((q_cur - q_prev) / k)
    h_ref = 0.5 * float(p_half @ system.mass.solve(p_half)) + 0.5 * (pot_cur + pot_prev)
    init_grad = counts.gradient
    record = _new_record(config.scheme, k, steps, probe)
    record.h_ref = h_ref
    monitor = _DivergenceMonitor(
        system, "sv", k, energy_continuous(counted, q0, p0), config.divergence_threshold
    )
    rec = _Recorder(steps)
    states = [] if store_states else None
    rec.push(0.0, q0[probe], p0[probe], h_ref, h_ref)
    rec.push(k, q_cur[probe], p_half[probe], h_ref, h_ref)
    if store_states:
        states.append((q_cur.copy(), q_prev.copy()))
    error = None
    try:
        for j in range(2, steps + 1):
            record.kernel_steps += 1
            q_new = sv_step(counted, q_cur, q_prev, k)
            p_half = system.mass.apply((q_new - q_cur) / k)
            monitor.check(j, q_new, p_half)
            pot_new = float(counted.potential(q_new))
            h = 0.5 * float(p_half @ system.mass.solve(p_half)) + 0.5 * (pot_new + pot_cur)
            rec.push(j * k, q_new[probe], p_half[probe], h, h_ref)
            if store_states:
                states.append((q_new.copy(), q_cur.copy()))
            q_prev, q_cur, pot_cur = q_cur, q_new, pot_new
    except Diverged as exc:
        error = exc
    record.states = states
    record.final_state = (q_cur, q_prev, None)
    return _finish(record, rec, counts, init_grad, time.perf_counter() - t0, error)


def _run_marazzato(system, counted, counts, config, q0, p0, probe, steps, store_states):
    k = config.dt
    t0 = time.perf_counter()
    g0 = counted.gradient(q0)
    p_ph = p0 - (0.5 * k) * g0
    p_mh = p0 + (0.5 * k) * g0
    q_cur = q0.copy()
    h_ref = marazzato_energy(counted, p_ph, p_mh, q_cur)
    init_grad = counts.gradient
    record = _new_record(config.scheme, k, steps, probe)
    record.h_ref = h_ref
    monitor = _DivergenceMonitor(
        system, "marazzato", k, energy_continuous(counted, q0, p0), config.divergence_threshold
    )
    rec = _Recorder(steps)
    states = [] if store_states else None
    rec.push(0.0, q0[probe], p0[probe], h_ref, h_ref)
    error = None
    try:
        for j in range(1, steps + 1):
            record.kernel_steps += 1
            q_new, p_3h = marazzato_step(counted, q_cur, p_mh, p_ph, k, config.quad_nodes)
            monitor.check(j, q_new, p_3h)
            q_cur, p_mh, p_ph = q_new, p_ph, p_3h
            h = marazzato_energy(counted, p_ph, p_mh, q_cur)
            rec.push(j * k, q_cur[probe], p_mh[probe], h, h_ref)
            if store_states:
                states.append((q_cur.copy(), p_mh.copy(), p_ph.copy()))
    except Diverged as exc:
        error = exc
    record.states = states
    record.final_state = (q_cur, p_mh, p_ph)
    return _finish(record, rec, counts, init_grad, time.perf_counter() - t0, error)


def _run_ieq(system, counted, counts, config, q0, p0, probe, steps, store_states):
    k = config.dt
    split = config.scheme == "ieq_split"
    t0 = time.perf_counter()
    q_prev, q_cur = sv_init_kicked(counted, q0, p0, k)
    psi = psi_init(counted, q0, p0, k, config.eps, use_split=split)
    p_half = system.mass.apply((q_cur - q_prev) / k)
    h_ref = ieq_energy(counted, p_half, psi, (q_cur, q_prev) if split else None)
    init_grad = counts.gradient
    record = _new_record(config.scheme, k, steps, probe)
    record.h_ref = h_ref
    monitor = _DivergenceMonitor(system, config.scheme, k, h_ref, config.divergence_threshold)
    rec = _Recorder(steps)
    states = [] if store_states else None
    rec.push(0.0, q0[probe], p0[probe], h_ref, h_ref)
    rec.push(k, q_cur[probe], p_half[probe], h_ref, h_ref)
    if store_states:
        states.append((q_cur.copy(), q_prev.copy(), psi))
    step_fn = ieq_split_step if split else ieq_step
    error = None
    try:
        for j in range(2, steps + 1):
            record.kernel_steps += 1
            q_new, psi, p_half = step_fn(counted, q_cur, q_prev, psi, k, config.eps)
            monitor.check(j, q_new, p_half)
            h = ieq_energy(counted, p_half, psi, (q_new, q_cur) if split else None)
            rec.push(j * k, q_new[probe], p_half[probe], h, h_ref)
            if store_states:
                states.append((q_new.copy(), q_cur.copy(), psi))
            q_prev, q_cur = q_cur, q_new
    except Diverged as exc:
        error = exc
    record.states = states
    record.final_state = (q_cur, q_prev, psi)
    return _finish(record, rec, counts, init_grad, time.perf_counter() - t0, error)


def _run_variable(system, counted, counts, config, q0, p0, probe, steps, store_states):
    seq = tuple(config.dt_sequence) if config.dt_sequence else (config.dt,)
    t0 = time.perf_counter()
    k_first = seq[0]
    _, q_cur = sv_init_kicked(counted, q0, p0, k_first)
    p_half = system.mass.apply((q_cur - q0) / k_first)
    psi = psi_init(counted, q0, p0, k_first, config.eps)
    h_ref = ieq_energy(counted, p_half, psi)
    init_grad = counts.gradient
    record = _new_record(config.scheme, k_first, steps, probe)
    record.h_ref = h_ref
    monitor = _DivergenceMonitor(system, "ieq_variable", k_first, h_ref, config.divergence_threshold)
    rec = _Recorder(steps)
    states = [] if store_states else None
    rec.push(0.0, q0[probe], p0[probe], h_ref, h_ref)
    t_cur = k_first
    rec.push(t_cur, q_cur[probe], p_half[probe], h_ref, h_ref)
    if store_states:
        states.append((q_cur.copy(), p_half.copy(), psi))
    error = None
    try:
        for j in range(2, steps + 1):
            # intervals: k^{n+1/2} = seq[n]; half instants at interval
            # midpoints give k^n = (seq[n-1] + seq[n]) / 2
            n = j - 1
            k_prev = seq[(n - 1) % len(seq)]
            k_next = seq[n % len(seq)]
            k_n = 0.5 * (k_prev + k_next)
            record.kernel_steps += 1
            q_new, p_half, psi = ieq_variable_step(
                counted, q_cur, p_half, psi, k_n, k_next, config.eps
            )
            monitor.check(j, q_new, p_half)
            t_cur += k_next
            h = ieq_energy(counted, p_half, psi)
            rec.push(t_cur, q_new[probe], p_half[probe], h, h_ref)
            if store_states:
                states.append((q_new.copy(), p_half.copy(), psi))
            q_cur = q_new
    except Diverged as exc:
        error = exc
    record.states = states
    record.final_state = (q_cur, p_half, psi)
    return _finish(record, rec, counts, init_grad, time.perf_counter() - t0, error)


def _run_baseline(system, config, q0, p0, probe, steps, store_states):
    stepper = system.baselines[config.scheme]
    k = config.dt
    t0 = time.perf_counter()
    stepper.reset_stats()
    state = stepper.init(q0, p0, k, config)
    h_ref = stepper.energy(state, k)
    record = _new_record(config.scheme, k, steps, probe)
    record.h_ref = h_ref
    monitor = _DivergenceMonitor(
        system, config.scheme, k, energy_continuous(system, q0, p0), config.divergence_threshold
    )
    rec = _Recorder(steps)
    states = [] if store_states else None
    p_half = system.mass.apply((state.q - state.q_prev) / k)
    rec.push(0.0, q0[probe], p0[probe], h_ref, h_ref)
    rec.push(k, state.q[probe], p_half[probe], h_ref, h_ref)
    if store_states:
        states.append(stepper.snapshot(state))
    error = None
    try:
        for j in range(2, steps + 1):
            record.kernel_steps += 1
            state = stepper.step(state, k, config)
            p_half = system.mass.apply((state.q - state.q_prev) / k)
            monitor.check(j, state.q, p_half)
            h = stepper.energy(state, k)
            rec.push(j * k, state.q[probe], p_half[probe], h, h_ref)
            if store_states:
                states.append(stepper.snapshot(state))
    except Diverged as exc:
        error = exc
    record.states = states
    record.final_state = (state.q, state.q_prev, None)
    counts = _EvalCounts()
    out = _finish(record, rec, counts, 0, time.perf_counter() - t0, error)
    out.linear_solves = stepper.stats.get("linear_solves", 0)
    return out
