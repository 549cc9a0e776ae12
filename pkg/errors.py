# errors.py
from typing import Optional, Sequence


class MultidivError(Exception):
    """Base class for every error raised by the package."""


class ExpressionSyntaxError(MultidivError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.reason = message
        self.offset = offset


class UnknownIdentifierError(ExpressionSyntaxError):
    pass


class VariableRangeError(ExpressionSyntaxError):
    pass


class ExpressionDomainError(MultidivError):
    """Evaluation left the domain of a function (log, sqrt, division)."""


class ShapeError(MultidivError):
    """Dimension, grade or variance mismatch."""


class NotDifferentiableError(MultidivError):
    pass


class PointOutsideDomainError(MultidivError):
    def __init__(self, message: str, point: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.point = None if point is None else [float(v) for v in point]


class SupportError(MultidivError):
    pass


class QuadratureError(MultidivError):
    pass


class FlowExitError(PointOutsideDomainError):
    pass


class SingularJacobianError(MultidivError):
    def __init__(self, message: str, point: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.point = None if point is None else [float(v) for v in point]


class TransversalityError(MultidivError):
    def __init__(self, message: str, witness: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.witness = None if witness is None else [float(v) for v in witness]


class ClosednessError(MultidivError):
    def __init__(self, message: str, witness: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.witness = None if witness is None else [float(v) for v in witness]


class ConvergenceError(MultidivError):
    pass


class ConfigError(MultidivError):
    pass


class DensityError(MultidivError):
    def __init__(self, message: str, point: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.point = None if point is None else [float(v) for v in point]
