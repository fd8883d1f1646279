"""
Errors Module

Exception hierarchy shared by every ordcomp module. Each class carries the
process exit code the command line interface reports for it.
"""

from typing import Any, Dict, Optional, Sequence


class OrdCompError(Exception):
    """Base class for all ordcomp errors"""

    exit_code = 4

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary"""
        result = {'error': type(self).__name__, 'message': self.message}
        for key, value in self.details.items():
            result[key] = _plain(value)
        return result


def _plain(value: Any) -> Any:
    # Boxes and points expose to_dict / coords; everything else is passed through
    if hasattr(value, 'to_dict'):
        return value.to_dict()
    if hasattr(value, 'coords'):
        return list(value.coords)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class InputError(OrdCompError):
    """Invalid input: bad values, malformed files, violated preconditions"""

    exit_code = 2


class SolveError(OrdCompError):
    """The constructive solver could not produce a certified solution"""

    exit_code = 3


class InvariantViolation(OrdCompError):
    """An internal invariant was found broken"""

    exit_code = 4


class NaNValue(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class ZeroWidthAxis(InputError):
    pass


class EmptyPartition(InputError):
    pass


class OutOfDomain(InputError):
    pass


class OnSkeleton(InputError):
    pass


class DomainMismatch(InputError):
    pass


class ComplexMismatch(InputError):
    pass


class DegreeTooLow(InputError):
    pass


class RadiusOrder(InputError):
    pass


class EmptyFamily(InputError):
    pass


class NotNearlyFinite(InputError):
    pass


class NotNested(InputError):
    pass


class UnknownFunction(InputError):
    pass


class ArityError(InputError):
    pass


class UnboundParameter(InputError):
    pass


class NonpositiveViscosity(InputError):
    pass


class CenterNotOnInitialFace(InputError):
    pass


class ConfigError(InputError):
    pass


class DslSyntaxError(InputError):
    """Malformed operator text; line and column are 1-based"""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})", line=line, col=col)
        self.line = line
        self.col = col


class FormatError(InputError):
    """Malformed input file; line is 1-based"""

    def __init__(self, message: str, line: int, path: Optional[str] = None):
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{message} ({where})", line=line, path=path)
        self.line = line


class EvalDomainError(InputError):
    """Operator evaluation left its domain, e.g. a division by zero"""

    def __init__(self, message: str, node: Any):
        super().__init__(message, node=str(node))
        self.node = node


class NoJetFound(SolveError):
    """The jet solver did not reach the target (F is not onto it numerically)"""

    def __init__(self, message: str, point: Sequence[float], residual: float, cell: Any = None):
        super().__init__(message, point=list(point), residual=residual, cell=cell)
        self.point = tuple(point)
        self.residual = residual
        self.cell = cell


class DepthExhausted(SolveError):
    """A cell still violates the band at the maximum bisection depth"""

    def __init__(self, message: str, cell: Any, worst_margin: float):
        super().__init__(message, cell=cell, worst_margin=worst_margin)
        self.cell = cell
        self.worst_margin = worst_margin
