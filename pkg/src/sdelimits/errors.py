"""Exception hierarchy shared by all modules."""


class SdeLimitsError(Exception):
    """Base class for library errors."""


class InputError(SdeLimitsError, ValueError):
    """Caller supplied unusable input (empty sampler, bad shapes)."""


class ConfigError(SdeLimitsError, ValueError):
    """Model or experiment parameters outside their admissible range."""


class DomainError(SdeLimitsError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class EvaluationError(SdeLimitsError, ArithmeticError):
    """A model function returned non-finite values."""


class IntervalStraddleError(SdeLimitsError):
    """A per-piece check received a pair from two different intervals."""


class EllipticityError(SdeLimitsError):
    """sigma sigma^T - I/(2 kappa) has a clearly negative eigenvalue."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class DegenerateDiffusionError(SdeLimitsError):
    """sigma vanishes where the transform needs to divide by it."""


class ConstructionError(SdeLimitsError):
    """Quadrature or table construction did not reach its accuracy target."""


class CertificationError(SdeLimitsError):
    """A numerical certificate could not be established."""


class InternalError(SdeLimitsError, RuntimeError):
    """Should be unreachable when upstream certificates hold."""
