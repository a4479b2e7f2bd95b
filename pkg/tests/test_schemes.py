import numpy as np
import pytest

from conftest import (
    dense_staggered_step,
    dense_variable_step,
    linear_fpu_system,
)
from ieqint.errors import ConfigError, NoSplit
from ieqint.hamiltonian import HamiltonianSystem, quadratise
from ieqint.linalg import MassMatrix, OpCounter
from ieqint.models import fpu, string
from ieqint.schemes import (
    SchemeConfig,
    ieq_energy,
    ieq_split_step,
    ieq_step,
    ieq_variable_step,
    marazzato_energy,
    marazzato_step,
    max_stable_dt,
    psi_init,
    simulate,
    split_step_stable,
    sv_init,
    sv_init_kicked,
    sv_step,
)


def free_system(n=2):
    return HamiltonianSystem(
        n=n, mass=MassMatrix.identity(n),
        potential=lambda q: 0.0, gradient=lambda q: np.zeros(n),
    )


def harmonic_1dof(omega):
    return HamiltonianSystem(
        n=1, mass=MassMatrix.identity(1),
        potential=lambda q: 0.5 * omega**2 * float(q[0] ** 2),
        gradient=lambda q: np.array([omega**2 * q[0]]),
    )


class TestSvInit:
    def test_zero_momentum(self, fpu_system):
        q0 = np.array([0.0, 0.0, 0.0, 100.0, 0.0, 0.0])
        a, b = sv_init(fpu_system, q0, np.zeros(6), 1e-3)
        assert np.array_equal(a, q0)
        assert np.array_equal(b, q0)

    def test_identity_mass(self):
        system = free_system(2)
        _, q1 = sv_init(system, np.zeros(2), np.array([1.0, 0.0]), 0.5)
        assert np.allclose(q1, [0.5, 0.0])

    def test_diagonal_solve(self):
        system = HamiltonianSystem(
            n=1, mass=MassMatrix.scalar(2.0, 1),
            potential=lambda q: 0.0, gradient=lambda q: np.zeros(1),
        )
        _, q1 = sv_init(system, np.array([1.0]), np.array([2.0]), 1.0)
        assert np.allclose(q1, [2.0])

    def test_kicked_matches_taylor_when_force_free(self):
        system = free_system(3)
        q0 = np.array([1.0, -1.0, 0.5])
        p0 = np.array([0.2, 0.0, -0.1])
        assert np.allclose(sv_init(system, q0, p0, 0.3)[1],
                           sv_init_kicked(system, q0, p0, 0.3)[1])


class TestSvStep:
    def test_free_flight(self, rng):
        system = free_system(4)
        q_n, q_nm1 = rng.normal(size=4), rng.normal(size=4)
        assert np.allclose(sv_step(system, q_n, q_nm1, 0.1), 2 * q_n - q_nm1)

    @pytest.mark.parametrize("k,stable", [(1.9, True), (2.1, False)])
    def test_harmonic_stability_band(self, k, stable):
        # leapfrog on q'' = -q is stable iff k < 2
        system = harmonic_1dof(1.0)
        q_prev, q_cur = sv_init_kicked(system, np.array([1.0]), np.array([0.0]), k)
        bounded = True
        for _ in range(10_000):
            q_new = 2 * q_cur - q_prev - k * k * system.gradient(q_cur)
            q_prev, q_cur = q_cur, q_new
            if abs(q_cur[0]) > 100.0:
                bounded = False
                break
        assert bounded == stable

    def test_fpu_band(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 100.0)
        inside = simulate(fpu_system, SchemeConfig(scheme="sv", dt=8e-3), q0, p0, steps=500)
        assert inside.diverged
        fine = simulate(fpu_system, SchemeConfig(scheme="sv", dt=1e-4), q0, p0, steps=2000)
        assert not fine.diverged


class TestMarazzato:
    def test_free_flight(self, rng):
        system = free_system(3)
        q_n = rng.normal(size=3)
        p_mh, p_ph = rng.normal(size=3), rng.normal(size=3)
        q_new, p_new = marazzato_step(system, q_n, p_mh, p_ph, 0.2, quad_nodes=3)
        assert np.allclose(q_new, q_n + 0.2 * p_ph)
        assert np.allclose(p_new, p_mh)

    def test_quadratic_potential_energy_exact(self):
        # linear force makes the free-flight integrand linear in t, so two
        # Gauss nodes integrate it exactly and the energy is conserved
        system = linear_fpu_system()
        q0, p0 = fpu.initial(fpu.FpuParams(), 10.0)
        rec = simulate(system, SchemeConfig(scheme="marazzato", dt=1e-3, quad_nodes=2),
                       q0, p0, steps=4000)
        assert rec.max_h_rel() <= 1e-12

    def test_single_node_worse_than_two(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 10.0)
        devs = {}
        for nodes in (1, 2):
            rec = simulate(fpu_system, SchemeConfig(scheme="marazzato", dt=1e-3, quad_nodes=nodes),
                           q0, p0, steps=2000)
            devs[nodes] = rec.max_h_rel()
        assert devs[2] < 1e-3 * devs[1]

    def test_energy_zero_momenta(self, fpu_system):
        q = np.array([0.0, 0.0, 0.0, 5.0, 0.0, 0.0])
        z = np.zeros(6)
        assert marazzato_energy(fpu_system, z, z, q) == pytest.approx(
            fpu_system.potential(q), rel=1e-14
        )

    def test_energy_can_be_negative(self, fpu_system, rng):
        w = rng.normal(size=6)
        h = marazzato_energy(fpu_system, w, -w, np.zeros(6))
        assert h == pytest.approx(-0.5 * float(w @ w), rel=1e-12)
        assert h < 0.0


class TestPsiInit:
    def test_zero_momentum(self, fpu_system):
        q0 = np.array([0.0, 0.0, 0.0, 100.0, 0.0, 0.0])
        psi = psi_init(fpu_system, q0, np.zeros(6), 1e-3, 0.0)
        assert psi == pytest.approx(quadratise(fpu_system, q0), rel=1e-14)
        assert psi == pytest.approx(14577.379737, rel=1e-9)

    def test_second_order_against_exact_flow(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 10.0)
        p0 = p0 + 1.0  # non-trivial momentum engages the correction term

        def psi_exact_half(k):
            fine = k / 512
            q_prev, q_cur = sv_init_kicked(fpu_system, q0, p0, fine)
            for _ in range(2, 257):  # exactly k/2 of fine stepping
                q_cur, q_prev = sv_step(fpu_system, q_cur, q_prev, fine), q_cur
            return quadratise(fpu_system, q_cur)

        errs = [abs(psi_init(fpu_system, q0, p0, k, 0.0) - psi_exact_half(k))
                for k in (1e-3, 5e-4, 2.5e-4)]
        assert 3.0 <= errs[0] / errs[1] <= 5.0
        assert 3.0 <= errs[1] / errs[2] <= 5.0


class TestIeqStep:
    def test_free_flight_at_flat_potential(self, rng):
        # constant potential: gradient vanishes, so g = 0 and the update
        # reduces to free flight with psi untouched
        system = HamiltonianSystem(
            n=3, mass=MassMatrix.identity(3),
            potential=lambda q: 1.0, gradient=lambda q: np.zeros(3),
        )
        q_n, q_nm1 = rng.normal(size=3), rng.normal(size=3)
        q_new, psi_new, _ = ieq_step(system, q_n, q_nm1, 1.5, 0.1)
        assert np.allclose(q_new, 2 * q_n - q_nm1, rtol=1e-14)
        assert psi_new == 1.5

    @pytest.mark.parametrize("half_count", [1, 3])
    def test_matches_dense_assembly(self, half_count, rng):
        system = fpu.build(fpu.FpuParams(half_count=half_count))
        n = system.n
        q_n = rng.normal(scale=10.0, size=n)
        q_nm1 = q_n + 1e-2 * rng.normal(size=n)
        psi = quadratise(system, q_n) * 1.01
        k = 1e-3
        q_d, psi_d, p_d = dense_staggered_step(system, q_n, q_nm1, psi, k)
        q_e, psi_e, p_e = ieq_step(system, q_n, q_nm1, psi, k)
        assert np.linalg.norm(q_d - q_e) <= 1e-13 * np.linalg.norm(q_e)
        assert abs(psi_d - psi_e) <= 1e-13 * abs(psi_e)
        assert np.linalg.norm(p_d - p_e) <= 1e-13 * max(np.linalg.norm(p_e), 1e-30)

    def test_split_matches_dense_assembly(self, fpu_system, rng):
        q_n = rng.normal(scale=10.0, size=6)
        q_nm1 = q_n + 1e-2 * rng.normal(size=6)
        psi = quadratise(fpu_system, q_n, use_split=True)
        k = 1e-3
        q_d, psi_d, p_d = dense_staggered_step(fpu_system, q_n, q_nm1, psi, k, split=True)
        q_e, psi_e, p_e = ieq_split_step(fpu_system, q_n, q_nm1, psi, k)
        assert np.linalg.norm(q_d - q_e) <= 1e-13 * np.linalg.norm(q_e)
        assert abs(psi_d - psi_e) <= 1e-13 * abs(psi_e)

    def test_conservation_long_run(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 100.0)
        rec = simulate(fpu_system, SchemeConfig(scheme="ieq", dt=1e-3), q0, p0, steps=10_000)
        assert rec.max_h_rel() <= 1e-12


class TestIeqEnergy:
    def test_zero_state(self, fpu_system):
        assert ieq_energy(fpu_system, np.zeros(6), 0.0) == 0.0

    def test_nonnegative_without_split_term(self, fpu_system, rng):
        for _ in range(20):
            h = ieq_energy(fpu_system, rng.normal(size=6), rng.normal())
            assert h >= 0.0

    def test_split_term_negative_total_still_nonnegative(self, fpu_system):
        # q_next = -q on the top stiffness eigenvector makes the cross term
        # negative; with k inside the stability bound the kinetic part wins
        v = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]) / np.sqrt(6.0)
        for k, nonneg in ((0.039, True), (0.041, False)):
            p = fpu_system.mass.apply((-v - v) / k)
            h = ieq_energy(fpu_system, p, 0.0, (-v, v))
            cross = 0.5 * float((-v) @ (fpu_system.split.k_op @ v))
            assert cross < 0.0
            assert (h >= 0.0) == nonneg

    def test_split_energy_requires_split(self):
        system = free_system(2)
        with pytest.raises(NoSplit):
            ieq_energy(system, np.zeros(2), 0.0, (np.zeros(2), np.zeros(2)))


class TestReduction:
    def test_split_scheme_reduces_to_sv_on_linear_system(self):
        system = linear_fpu_system()
        q0, p0 = fpu.initial(fpu.FpuParams(), 100.0)
        k = 1e-3
        q_prev, q_cur = sv_init_kicked(system, q0, p0, k)
        psi = psi_init(system, q0, p0, k, 0.0, use_split=True)
        assert psi == 0.0
        for _ in range(200):
            q_sv = sv_step(system, q_cur, q_prev, k)
            q_sp, psi, _ = ieq_split_step(system, q_cur, q_prev, psi, k, 0.0)
            scale = np.abs(q_sv).max()
            assert np.abs(q_sv - q_sp).max() <= 1e-13 * scale
            q_prev, q_cur = q_cur, q_sv


class TestMaxStableDt:
    def test_fpu_bound(self, fpu_system):
        assert max_stable_dt(fpu_system) == pytest.approx(2.0 / 50.0, rel=1e-9)

    def test_string_cfl(self):
        params = string.c3_params(segments=100)
        system = string.build(params)
        cfl = params.h * np.sqrt(params.rho * params.area / params.tension)
        bound = max_stable_dt(system)
        assert bound >= cfl  # discrete spectrum sits below the continuum limit
        assert bound == pytest.approx(cfl, rel=0.02)

    def test_plate_minimum_spacing_inversion(self):
        from ieqint.models import plate

        params = plate.PlateParams()
        k = 5e-6
        rigidity = params.young * params.thickness**3 / (12 * (1 - params.poisson**2))
        expected = 2.0 * np.sqrt(k) * (rigidity / (params.rho * params.thickness)) ** 0.25
        h_min = plate.min_grid_spacing(params, k)
        assert h_min == pytest.approx(expected, rel=1e-14)
        assert h_min == pytest.approx(7.8168e-3, rel=1e-4)
        # a grid chosen by the rule keeps the bound above the step
        grid_m = plate.grid_from_dt(params, k)
        system = plate.build(plate.PlateParams(grid_m=grid_m))
        assert max_stable_dt(system) >= k

    def test_no_split(self):
        with pytest.raises(NoSplit):
            max_stable_dt(free_system(2))

    def test_stability_gate_flips_at_bound(self, fpu_system):
        assert split_step_stable(fpu_system, 0.0399)
        assert not split_step_stable(fpu_system, 0.0401)

    def test_split_run_gated_without_override(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 1.0)
        with pytest.raises(ConfigError):
            simulate(fpu_system, SchemeConfig(scheme="ieq_split", dt=0.05), q0, p0, steps=10)
        rec = simulate(
            fpu_system,
            SchemeConfig(scheme="ieq_split", dt=0.05, allow_unstable=True),
            q0, p0, steps=10,
        )
        assert rec.rows >= 2


class TestVariableStep:
    def test_equal_steps_match_fixed_scheme(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 100.0)
        k = 1e-3
        fixed = simulate(fpu_system, SchemeConfig(scheme="ieq", dt=k), q0, p0,
                         steps=500, store_states=True)
        var = simulate(
            fpu_system,
            SchemeConfig(scheme="ieq_variable", dt=k, dt_sequence=(k,)),
            q0, p0, steps=500, store_states=True,
        )
        for (q_f, *_), (q_v, *_) in zip(fixed.states, var.states):
            assert np.abs(q_f - q_v).max() <= 1e-13 * max(np.abs(q_f).max(), 1e-30)

    def test_alternating_steps_conserve(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 100.0)
        rec = simulate(
            fpu_system,
            SchemeConfig(scheme="ieq_variable", dt_sequence=(1e-3, 5e-4)),
            q0, p0, steps=10_000,
        )
        assert rec.max_h_rel() <= 1e-12

    def test_matches_dense_assembly(self, fpu_system, rng):
        q_n = rng.normal(scale=10.0, size=6)
        p_mh = rng.normal(scale=100.0, size=6)
        psi = quadratise(fpu_system, q_n) * 0.97
        k_n, k_ph = 1e-3, 7e-4
        q_d, p_d, psi_d = dense_variable_step(fpu_system, q_n, p_mh, psi, k_n, k_ph)
        q_e, p_e, psi_e = ieq_variable_step(fpu_system, q_n, p_mh, psi, k_n, k_ph)
        assert np.linalg.norm(q_d - q_e) <= 1e-13 * np.linalg.norm(q_e)
        assert np.linalg.norm(p_d - p_e) <= 1e-13 * np.linalg.norm(p_e)
        assert abs(psi_d - psi_e) <= 1e-13 * abs(psi_e)


@pytest.mark.parametrize("scheme", ["ieq", "ieq_split", "ieq_variable"])
@pytest.mark.parametrize("model", ["fpu", "string", "plate"])
def test_conservation_matrix(scheme, model, fpu_system):
    """Relative energy deviation stays at rounding scale for every
    conservative scheme on every model (desk-scale grids)."""
    from ieqint.models import plate as plate_mod

    if model == "fpu":
        system, (q0, p0) = fpu_system, fpu.initial(fpu.FpuParams(), 100.0)
        dt, steps, eps = 1e-3, 10_000, 0.0
    elif model == "string":
        params = string.c3_params(segments=40)
        system = string.build(params)
        q0, p0 = string.initial(params, 300.0)
        dt, steps, eps = 2e-6, 5000, 1e8
    else:
        params = plate_mod.PlateParams(grid_m=9)
        system = plate_mod.build(params)
        q0, p0 = plate_mod.initial(params, 10.0)
        dt, steps, eps = 1e-5, 3000, 0.0
    cfg = SchemeConfig(
        scheme=scheme, dt=dt, eps=eps,
        dt_sequence=(dt, 0.5 * dt) if scheme == "ieq_variable" else None,
    )
    rec = simulate(system, cfg, q0, p0, steps=steps)
    assert not rec.diverged
    assert rec.max_h_rel() <= 1e-11


class TestCostCounters:
    @pytest.mark.parametrize(
        "scheme,expected",
        [("sv", 1), ("ieq", 1), ("ieq_split", 1), ("marazzato", 6)],
    )
    def test_gradient_evals_per_step_exact(self, fpu_system, scheme, expected):
        q0, p0 = fpu.initial(fpu.FpuParams(), 10.0)
        cfg = SchemeConfig(scheme=scheme, dt=1e-3, quad_nodes=6)
        rec = simulate(fpu_system, cfg, q0, p0, steps=50)
        assert rec.grad_evals == expected * rec.kernel_steps

    def test_ieq_update_work_is_linear_in_n(self, rng):
        counts = {}
        for half_count in (64, 128):
            system = fpu.build(fpu.FpuParams(half_count=half_count))
            n = system.n
            q_n = rng.normal(scale=5.0, size=n)
            q_nm1 = q_n + 1e-3 * rng.normal(size=n)
            psi = quadratise(system, q_n)
            ops = OpCounter()
            ieq_step(system, q_n, q_nm1, psi, 1e-3, ops=ops)
            counts[n] = ops.ops
        ratio = counts[256] / counts[128]
        assert 1.8 <= ratio <= 2.2


class TestBoundedness:
    def test_momentum_stays_under_energy_bound(self, fpu_system):
        q0, p0 = fpu.initial(fpu.FpuParams(), 100.0)
        k = 1e-3
        rec = simulate(fpu_system, SchemeConfig(scheme="ieq", dt=k), q0, p0,
                       steps=2000, store_states=True)
        bound = np.sqrt(2.0 * fpu_system.mass.eig_max() * rec.h_ref)
        for q_new, q_old, _ in rec.states:
            p = fpu_system.mass.apply((q_new - q_old) / k)
            assert np.linalg.norm(p) <= bound * (1.0 + 1e-12)


class TestStringWaveformConvergence:
    def test_split_scheme_converges_to_sv_reference(self):
        params = string.c3_params(segments=30)
        system = string.build(params)
        q0, p0 = string.initial(params, 300.0)
        k_base = 4e-6  # below the longitudinal resolution limit of the grid
        duration = 400 * k_base
        fine = k_base / 2**6
        ref = simulate(system, SchemeConfig(scheme="sv", dt=fine), q0, p0,
                       steps=round(duration / fine))
        errs = []
        for div in (1, 2, 4):
            k = k_base / div
            rec = simulate(system, SchemeConfig(scheme="ieq_split", dt=k, eps=1e8),
                           q0, p0, steps=round(duration / k))
            stride = round(k / fine)
            ref_probe = ref.probe_q[::stride][: len(rec.probe_q)]
            errs.append(float(np.sqrt(np.mean((rec.probe_q - ref_probe) ** 2))))
        assert 3.2 <= errs[0] / errs[1] <= 4.8
        assert 3.2 <= errs[1] / errs[2] <= 4.8
