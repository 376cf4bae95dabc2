"""Multi-flock alignment dynamics: agent, super-agent and 1D hydrodynamic solvers with diagnostics."""

from __future__ import annotations

__version__ = "0.1.0"

from .dynamics import ModelParams, rhs_master, rhs_shifted, rhs_superagent
from .errors import (BlowupError, CollisionError, ConfigError, DomainError, KernelDomainError, MultiflockError,
                     NumericalError, OrderingError, PreconditionError, UnsupportedKernelError)
from .integrate import IntegratorSpec, integrate, reference_integrate
from .kernels import KernelSpec, PotentialSpec
from .state import Flock, MultiFlockState, macro_observables

__all__ = [
    "ModelParams", "rhs_master", "rhs_shifted", "rhs_superagent", "BlowupError", "CollisionError", "ConfigError",
    "DomainError", "KernelDomainError", "MultiflockError", "NumericalError", "OrderingError", "PreconditionError",
    "UnsupportedKernelError", "IntegratorSpec", "integrate", "reference_integrate", "KernelSpec", "PotentialSpec",
    "Flock", "MultiFlockState", "macro_observables",
]
