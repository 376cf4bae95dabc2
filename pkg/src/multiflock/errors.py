"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MultiflockError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MultiflockError, ValueError):
    """An input lies outside the domain of an operation (e.g. log of a nonpositive series)."""


class KernelDomainError(DomainError):
    """A kernel was evaluated outside its domain (e.g. a singular kernel at r = 0)."""


class UnsupportedKernelError(MultiflockError, ValueError):
    pass


class NumericalError(MultiflockError, RuntimeError):
    """Quadrature or root finding failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved_tolerance: float | None = None):
        super().__init__(message)
        self.achieved_tolerance = achieved_tolerance


class CollisionError(MultiflockError, RuntimeError):
    """Two agents of one flock coincide while its kernel is singular."""

    def __init__(self, message: str, flock: int | None = None, pair: tuple[int, int] | None = None,
                 time: float | None = None):
        super().__init__(message)
        self.flock = flock
        self.pair = pair
        self.time = time


class BlowupError(MultiflockError, RuntimeError):
    """The state became non-finite or exceeded the blowup bound.

    ``last_time``/``last_state`` hold the last finite point reached and
    ``trajectory``/``log`` whatever had been sampled before the failure.
    """

    def __init__(self, message: str, last_time: float, last_state=None, trajectory=None, log=None):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state
        self.trajectory = trajectory if trajectory is not None else []
        self.log = log


class OrderingError(MultiflockError, RuntimeError):
    """1D Lagrangian particles crossed: the classical solution lost smoothness."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class PreconditionError(MultiflockError, ValueError):
    pass


class ConfigError(MultiflockError, ValueError):
    """Scenario configuration problems; ``problems`` lists (path, message) pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        text = "; ".join(f"{path}: {msg}" for path, msg in self.problems)
        super().__init__(text or "invalid configuration")
