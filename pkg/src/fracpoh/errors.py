"""Exception types raised across the package."""


class FracpohError(Exception):
    """Base class for all package errors."""


class ParameterError(FracpohError, ValueError):
    """An argument is outside its admissible range."""


class NumericalError(FracpohError):
    """A linear algebra step failed or is too ill-conditioned to trust."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class IterationError(FracpohError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SupercriticalError(ParameterError):
    """Power nonlinearity at or above the critical exponent."""

    def __init__(self, message, p_critical):
        super().__init__(message)
        self.p_critical = p_critical


class PreconditionError(FracpohError):
    """Input does not satisfy the precondition of an identity check."""


class ResourceError(FracpohError, MemoryError):
    """Requested discretization does not fit the memory budget."""

    def __init__(self, message, suggested_N=None):
        super().__init__(message)
        self.suggested_N = suggested_N


class ValidationError(FracpohError):
    """Configuration failed schema validation."""

    def __init__(self, message, field=None, module=None):
        super().__init__(message)
        self.field = field
        self.module = module


class CorruptionError(FracpohError):
    """Serialized file is truncated or fails its checksum."""


class CompatibilityError(FracpohError):
    """Serialized data does not match the requested grid or kernel."""
