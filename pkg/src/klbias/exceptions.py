"""Exception hierarchy shared across the package."""


class KLBiasError(Exception):
    """Base class for all package errors."""


class ContractError(KLBiasError, ValueError):
    """Raised when an argument violates a documented precondition.

    ``field`` optionally names the offending settings field so configuration
    errors can point at the exact key.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SingularConfigurationError(KLBiasError, ValueError):
    """Two atoms coincide, so a distance-based quantity is undefined."""


class UndefinedOrderParameterError(KLBiasError, ValueError):
    """No bonds fall inside the order-parameter cutoff."""


class NumericalFailure(KLBiasError, RuntimeError):
    """Base class for failures that end a run with a numerical-failure status."""


class DegeneratePopulationError(NumericalFailure):
    """Every particle carries zero weight."""


class BridgeFailureError(NumericalFailure):
    """An SMC bridge did not reach its end point within the step cap."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class DivergenceError(NumericalFailure):
    """The coefficient vector became non-finite."""


class ConfigError(KLBiasError, ValueError):
    """Invalid run configuration; ``path`` names the offending key."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class RunInterrupted(KLBiasError):
    """A run stopped early on request after writing a checkpoint."""
