"""Exception types raised by the solver library."""


class DDSplitError(Exception):
    """Base class for all library errors."""


class DomainError(DDSplitError, ValueError):
    """Argument outside the domain of a nonlinearity."""


class NoCrossing(DDSplitError):
    """Phi' - 1 does not change sign on the sampled range."""


class InversionFailure(DDSplitError):
    """A (pseudo-)inverse could not be bracketed."""


class ResolutionError(DDSplitError):
    """A tabulated nonlinearity is not resolved finely enough."""


class ConfigError(DDSplitError, ValueError):
    """Invalid grid, scheme or run configuration."""


class DegenerateCoefficient(DDSplitError):
    """A linearization factor that must be positive is not."""


class SolverFailure(DDSplitError):
    """The linear solver broke down or missed its tolerance."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NotApplicable(DDSplitError):
    """Operation requested for a problem it does not apply to."""


class UsageError(DDSplitError):
    """Bad command line or configuration file."""


class IoError(DDSplitError, OSError):
    """Output location cannot be written."""
