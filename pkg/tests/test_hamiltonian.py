import numpy as np
import pytest

from conftest import central_gradient
from ieqint.errors import (
    DegeneratePotential,
    DimensionMismatch,
    NegativePotential,
)
from ieqint.hamiltonian import (
    HamiltonianSystem,
    aux_gradient,
    energy_continuous,
    momentum_bound,
    quadratise,
)
from ieqint.linalg import MassMatrix
from ieqint.models import fpu, plate, string


def fpu_potential_scalar(q, omega=50.0):
    """Independent direct evaluation with explicit loops and wall terms."""
    m = len(q) // 2
    ext = [0.0] + list(q) + [0.0]  # 1-based with walls
    v = 0.0
    for i in range(1, m + 1):
        v += (omega**2 / 4.0) * (ext[2 * i] - ext[2 * i - 1]) ** 2
    for i in range(0, m + 1):
        v += (ext[2 * i + 1] - ext[2 * i]) ** 4
    return v


class TestEnergyContinuous:
    def test_zero_state(self, fpu_system):
        z = np.zeros(6)
        assert energy_continuous(fpu_system, z, z) == 0.0

    def test_fpu_stock_excitation(self, fpu_system):
        q = np.array([0.0, 0.0, 0.0, 100.0, 0.0, 0.0])
        h = energy_continuous(fpu_system, q, np.zeros(6))
        assert h == pytest.approx(fpu_potential_scalar(q), rel=1e-14)
        assert h == pytest.approx(1.0625e8, rel=1e-12)

    def test_kinetic_identity(self, rng):
        mass = MassMatrix.diagonal([1.0, 4.0, 2.0])
        system = HamiltonianSystem(
            n=3, mass=mass, potential=lambda q: 0.0, gradient=lambda q: np.zeros(3)
        )
        w = rng.normal(size=3)
        h = energy_continuous(system, np.zeros(3), mass.apply(w))
        assert h == pytest.approx(0.5 * float(w @ mass.apply(w)), rel=1e-13)

    def test_dimension_mismatch(self, fpu_system):
        with pytest.raises(DimensionMismatch):
            energy_continuous(fpu_system, np.zeros(5), np.zeros(6))


class TestQuadratise:
    def test_zero_potential(self, fpu_system):
        assert quadratise(fpu_system, np.zeros(6)) == 0.0

    def test_value_two(self):
        system = HamiltonianSystem(
            n=1, mass=MassMatrix.identity(1),
            potential=lambda q: 2.0, gradient=lambda q: np.zeros(1),
        )
        assert quadratise(system, np.zeros(1)) == pytest.approx(2.0, rel=1e-15)

    def test_fpu_stock_value(self, fpu_system):
        q = np.array([0.0, 0.0, 0.0, 100.0, 0.0, 0.0])
        expected = np.sqrt(2.0 * fpu_potential_scalar(q))
        psi = quadratise(fpu_system, q)
        assert psi == pytest.approx(expected, rel=1e-14)
        assert psi == pytest.approx(14577.379737, rel=1e-9)

    def test_negative_potential_raises(self):
        system = HamiltonianSystem(
            n=1, mass=MassMatrix.identity(1),
            potential=lambda q: -1.0, gradient=lambda q: np.zeros(1),
        )
        with pytest.raises(NegativePotential):
            quadratise(system, np.zeros(1))

    @pytest.mark.parametrize("eps", [0.0, 1e4])
    def test_round_trip(self, fpu_system, rng, eps):
        for _ in range(10):
            q = rng.normal(scale=30.0, size=6)
            psi = quadratise(fpu_system, q, eps=eps)
            v = fpu_system.potential(q)
            assert 0.5 * psi * psi == pytest.approx(v + eps, rel=1e-12)


class TestAuxGradient:
    def test_zero_gradient_convention(self, fpu_system):
        g = aux_gradient(fpu_system, np.zeros(6))
        assert np.array_equal(g, np.zeros(6))

    def test_single_dof_quartic(self):
        system = HamiltonianSystem(
            n=1, mass=MassMatrix.identity(1),
            potential=lambda q: float(q[0] ** 4),
            gradient=lambda q: np.array([4.0 * q[0] ** 3]),
        )
        g = aux_gradient(system, np.array([1.0]))
        assert g[0] == pytest.approx(2.0 * np.sqrt(2.0), rel=1e-12)

    def test_degenerate_raises(self):
        system = HamiltonianSystem(
            n=2, mass=MassMatrix.identity(2),
            potential=lambda q: 0.0, gradient=lambda q: np.ones(2),
        )
        with pytest.raises(DegeneratePotential):
            aux_gradient(system, np.zeros(2))

    def test_round_trip_reproduces_gradient(self, fpu_system, rng):
        for eps in (0.0, 1e3):
            q = rng.normal(scale=20.0, size=6)
            g = aux_gradient(fpu_system, q, eps=eps)
            grad = fpu_system.gradient(q)
            psi = quadratise(fpu_system, q, eps=eps)
            assert np.allclose(g * psi, grad, rtol=1e-12, atol=1e-12 * np.abs(grad).max())


@pytest.mark.parametrize(
    "case",
    [
        ("fpu", None, 20.0),
        ("string", None, 5e-3),
        ("plate", None, 5e-4),
    ],
    ids=["fpu", "string", "plate"],
)
def test_aux_gradient_is_quadratised_gradient(case, rng, fpu_system, string_system, plate_system):
    """Chain rule: g must match central differences of psi(q)."""
    name, _, scale = case
    system = {"fpu": fpu_system, "string": string_system, "plate": plate_system}[name]
    eps = 10.0  # keep psi away from zero so the finite differences behave
    q = rng.normal(scale=scale, size=system.n)
    g = aux_gradient(system, q, eps=eps)
    fd = central_gradient(lambda x: quadratise(system, x, eps=eps), q, 1e-6 * scale)
    assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-12)


class TestSplitConsistency:
    def test_all_models(self, fpu_system, string_system, plate_system, rng):
        for system, scale in ((fpu_system, 30.0), (string_system, 5e-3), (plate_system, 5e-4)):
            for _ in range(5):
                q = rng.normal(scale=scale, size=system.n)
                v = system.potential(q)
                via_split = 0.5 * float(q @ (system.split.k_op @ q)) + system.split.residual(q)
                assert abs(v - via_split) <= 1e-10 * (1.0 + abs(v))


class TestMomentumBound:
    def test_identity_mass(self):
        system = HamiltonianSystem(
            n=2, mass=MassMatrix.identity(2),
            potential=lambda q: 0.0, gradient=lambda q: np.zeros(2),
        )
        assert momentum_bound(system, 2.0) == pytest.approx(2.0, rel=1e-14)

    def test_scalar_mass(self):
        system = HamiltonianSystem(
            n=2, mass=MassMatrix.scalar(3.0, 2),
            potential=lambda q: 0.0, gradient=lambda q: np.zeros(2),
        )
        h0 = 5.0
        assert momentum_bound(system, h0) == pytest.approx(np.sqrt(2.0 * 3.0 * h0), rel=1e-14)

    def test_diagonal_mass(self):
        system = HamiltonianSystem(
            n=2, mass=MassMatrix.diagonal([1.0, 4.0]),
            potential=lambda q: 0.0, gradient=lambda q: np.zeros(2),
        )
        assert momentum_bound(system, 1.0) == pytest.approx(np.sqrt(8.0), rel=1e-12)
