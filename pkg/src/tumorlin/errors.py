"""Exception types raised by the solvers."""


class TumorlinError(Exception):
    """Base class for solver failures (CLI exit code 1)."""


class DomainError(TumorlinError, ValueError):
    pass


class NoBracket(TumorlinError):
    """Shooting residual never changed sign over the scanned radii."""


class SingularStep(TumorlinError):
    """Radial integration left the admissible range of the proliferating fraction."""


class SpectralViolation(TumorlinError, ValueError):
    """Resolvent requested at a point not to the right of the spectral bound."""


class CFLViolation(TumorlinError, ValueError):
    pass


class Blowup(TumorlinError):
    pass


class ConditionViolated(TumorlinError):
    """A sign condition that the parameter regime guarantees failed numerically."""


class NoThreshold(TumorlinError):
    def __init__(self, message, failing_k=None):
        super().__init__(message)
        self.failing_k = failing_k


class OperatorMismatch(TumorlinError, ValueError):
    """Operator tag incompatible with the supplied mode."""
