"""Exception types shared across the library and the CLI harness."""


class NotPositiveDefinite(ValueError):
    """A matrix required to be SPD produced a non-positive pivot."""


class SingularUpdate(ArithmeticError):
    """Rank-1 solve denominator vanished; valid scheme inputs cannot do this."""


class NoConvergence(RuntimeError):
    """An iterative procedure hit its iteration cap."""


class NewtonNoConvergence(NoConvergence):
    """Newton-Raphson failed to meet its tolerance within the iteration cap."""


class LinearSolveFailure(RuntimeError):
    """A direct linear solve returned non-finite values."""


class DimensionMismatch(ValueError):
    """Vector or matrix dimensions inconsistent with the system size."""


class NegativePotential(ValueError):
    """Potential energy (plus shift) evaluated below zero."""


class DegeneratePotential(ValueError):
    """Potential energy (plus shift) vanished where its gradient does not."""


class Diverged(RuntimeError):
    """A trajectory left the finite/bounded regime.

    Carries the step index at which divergence was detected.
    """

    def __init__(self, step, message=""):
        self.step = step
        super().__init__(message or f"diverged at step {step}")


class NoSplit(ValueError):
    """Operation requires a split potential but the system has none."""


class IndexOutOfRange(IndexError):
    """A model initial condition does not fit the requested lattice size."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class NonCommensurateSteps(ConfigError):
    """Reference and run time steps are not related by a power of two."""
