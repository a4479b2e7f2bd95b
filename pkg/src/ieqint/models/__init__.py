"""Built-in model systems: FPU lattice, nonlinear string, von Karman plate."""

from . import fpu, plate, string

MODEL_NAMES = ("fpu", "string", "plate")

__all__ = ["fpu", "string", "plate", "MODEL_NAMES"]
