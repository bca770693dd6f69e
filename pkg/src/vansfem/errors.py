"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid user-supplied configuration (bounds, counts, options)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class UnsupportedConfigurationError(ConfigurationError):
    """Valid input that the implementation deliberately does not support."""


class StateError(RuntimeError):
    """Solution history missing or inconsistent."""


class AssemblyError(RuntimeError):
    """Assembly could not proceed (e.g. nonpositive void fraction)."""


class SolverError(RuntimeError):
    """A linear solve failed to reach its tolerance."""


class NonConvergenceError(RuntimeError):
    """An iterative method hit its iteration cap.

    ``history`` carries whatever residual/iterate trace was recorded.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class DivergenceError(NonConvergenceError):
    """Residual became non-finite."""
