"""Exception types raised across the package."""


class CvxrsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CvxrsError, ValueError):
    pass


class SingularJacobian(CvxrsError):
    """The equality Jacobian at the nominal point is (numerically) singular."""

    def __init__(self, condition: float, message: str | None = None):
        self.condition = condition
        super().__init__(message or f"M Lambda C is singular (condition number {condition:.3g})")


class UnsupportedKind(CvxrsError):
    pass


class UnsupportedUncertaintyForm(CvxrsError):
    pass


class EmptyBox(CvxrsError, ValueError):
    pass


class NegativeRadius(CvxrsError, ValueError):
    pass


class InfiniteMargin(CvxrsError):
    """Uncertainty never enters the certified rows, so any radius is admissible."""


class RetrievalFailed(CvxrsError):
    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class ParseError(CvxrsError, ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(CvxrsError, ValueError):
    pass
