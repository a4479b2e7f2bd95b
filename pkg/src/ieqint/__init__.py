"""Structure-preserving time integration for separable Hamiltonian systems
with non-negative potential energy: explicit exactly energy-conserving
schemes built on the square-root energy substitution, classic baselines,
and three built-in model systems with a batch experiment harness."""

from .errors import (
    ConfigError,
    DegeneratePotential,
    DimensionMismatch,
    Diverged,
    IndexOutOfRange,
    LinearSolveFailure,
    NegativePotential,
    NewtonNoConvergence,
    NoConvergence,
    NonCommensurateSteps,
    NoSplit,
    NotPositiveDefinite,
    SingularUpdate,
)
from .hamiltonian import (
    HamiltonianSystem,
    SplitPotential,
    StateVector,
    aux_gradient,
    energy_continuous,
    momentum_bound,
    quadratise,
)
from .linalg import (
    FactorizationHandle,
    MassMatrix,
    OpCounter,
    SparseOperator,
    max_eig_sym,
    sherman_morrison_solve,
    spd_factorize,
)
from .schemes import (
    EnergySample,
    SchemeConfig,
    TrajectoryRecord,
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

__version__ = "0.1.0"
