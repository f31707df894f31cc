"""
Error handling and exception hierarchy for vip_flow
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Sequence


class ErrorCode(Enum):
    """Enumeration of all error codes used in vip_flow"""

    # Kernel construction
    INSUFFICIENT_NEIGHBORS = "INSUFFICIENT_NEIGHBORS"
    SINGULAR_MOMENT = "SINGULAR_MOMENT"
    DEGREE_TOO_LOW = "DEGREE_TOO_LOW"

    # Geometry
    NONCONFORMING_SPACING = "NONCONFORMING_SPACING"
    SIZE_MISMATCH = "SIZE_MISMATCH"
    REALIZATION_FAILURE = "REALIZATION_FAILURE"

    # Assembly
    DIMENSION_MISMATCH = "DIMENSION_MISMATCH"

    # Solver
    SINGULAR_SYSTEM = "SINGULAR_SYSTEM"
    NO_CONVERGENCE = "NO_CONVERGENCE"
    TOO_LARGE = "TOO_LARGE"

    # Input
    CONFIG_ERROR = "CONFIG_ERROR"
    DATA_FORMAT_ERROR = "DATA_FORMAT_ERROR"


class VipError(Exception):
    """
    Base exception for vip_flow with structured error information.

    All vip_flow exceptions inherit from this class and provide:
    - A stable error code for programmatic handling
    - Context describing where the failure happened
    - An optional underlying cause
    - Suggestions for resolving the problem where applicable
    """

    def __init__(
        self,
        message: str,
        error_code: ErrorCode,
        context: Optional[Dict[str, Any]] = None,
        cause: Optional[Exception] = None,
        suggestions: Optional[List[str]] = None,
    ):
        super().__init__(message)
        self.error_code = error_code
        self.context = context or {}
        self.cause = cause
        self.suggestions = suggestions or []

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary for serialization/logging"""
        return {
            "error_type": self.__class__.__name__,
            "message": str(self),
            "error_code": self.error_code.value,
            "context": self.context,
            "cause": str(self.cause) if self.cause else None,
            "suggestions": self.suggestions,
        }

    def __str__(self) -> str:
        parts = [super().__str__()]
        if self.context:
            parts.append(f"Context: {self.context}")
        if self.cause:
            parts.append(f"Caused by: {self.cause}")
        if self.suggestions:
            parts.append(f"Suggestions: {'; '.join(self.suggestions)}")
        return " | ".join(parts)


def _merge_context(base: Dict[str, Any], kwargs: Dict[str, Any]) -> Dict[str, Any]:
    extra = kwargs.pop("context", None) or {}
    merged = dict(base)
    merged.update(extra)
    return merged


class InsufficientNeighborsError(VipError):
    """Raised when a kernel support holds fewer nodes than basis terms"""

    def __init__(self, point: Sequence[float], found: int, required: int, **kwargs):
        super().__init__(
            f"Only {found} nodes inside the kernel support at {tuple(point)}, "
            f"need at least {required}",
            ErrorCode.INSUFFICIENT_NEIGHBORS,
            context=_merge_context(
                {"point": tuple(point), "found": found, "required": required},
                kwargs,
            ),
            suggestions=[
                "Increase the dilation ratio c = rho/h",
                "Lower the reproducing degree m",
                "Check that the node set covers the evaluation point",
            ],
            **kwargs,
        )


class SingularMomentError(VipError):
    """Raised when the moment matrix cannot be Cholesky-factored"""

    def __init__(self, point: Sequence[float], **kwargs):
        super().__init__(
            f"Moment matrix is not positive definite at {tuple(point)}",
            ErrorCode.SINGULAR_MOMENT,
            context=_merge_context({"point": tuple(point)}, kwargs),
            suggestions=[
                "Nodes in the support may be collinear; perturb or add nodes",
                "Increase the dilation ratio c = rho/h",
            ],
            **kwargs,
        )


class DegreeTooLowError(VipError):
    """Raised when an operator needs derivatives the basis cannot reproduce"""

    def __init__(self, operator: str, degree: int, required: int, **kwargs):
        super().__init__(
            f"Operator '{operator}' needs reproducing degree >= {required}, "
            f"got m = {degree}",
            ErrorCode.DEGREE_TOO_LOW,
            context=_merge_context(
                {"operator": operator, "degree": degree, "required": required},
                kwargs,
            ),
            suggestions=[f"Use m >= {required}"],
            **kwargs,
        )


class NonconformingSpacingError(VipError):
    """Raised when h does not divide the extent of an axis"""

    def __init__(self, axis: int, extent: float, spacing: float, **kwargs):
        super().__init__(
            f"Spacing h = {spacing} does not divide the extent "
            f"{extent} on axis {axis}",
            ErrorCode.NONCONFORMING_SPACING,
            context=_merge_context(
                {"axis": axis, "extent": extent, "spacing": spacing}, kwargs
            ),
            suggestions=["Choose h = extent / k for an integer k"],
            **kwargs,
        )


class SizeMismatchError(VipError):
    """Raised when a node set is too small for the requested evaluation set"""

    def __init__(self, nodes: int, points: int, **kwargs):
        super().__init__(
            f"Node set of size N = {nodes} cannot realize {points} virtual points",
            ErrorCode.SIZE_MISMATCH,
            context=_merge_context({"nodes": nodes, "points": points}, kwargs),
            suggestions=["Use at least as many nodes as virtual points"],
            **kwargs,
        )


class RealizationFailureError(VipError):
    """Raised when the node set does not realize the virtual points"""

    def __init__(self, rank: int, rows: int, min_singular_value: float, **kwargs):
        super().__init__(
            f"Interpolation matrix has row rank {rank} < {rows} "
            f"(smallest singular value {min_singular_value:.3e})",
            ErrorCode.REALIZATION_FAILURE,
            context=_merge_context(
                {
                    "rank": rank,
                    "rows": rows,
                    "min_singular_value": min_singular_value,
                },
                kwargs,
            ),
            suggestions=[
                "Remove duplicated virtual points",
                "Add nodes or increase the dilation ratio",
            ],
            **kwargs,
        )


class DimensionMismatchError(VipError):
    """Raised when operator shapes cannot be composed"""

    def __init__(self, operation: str, expected: Any, actual: Any, **kwargs):
        super().__init__(
            f"Dimension mismatch in {operation}: expected {expected}, got {actual}",
            ErrorCode.DIMENSION_MISMATCH,
            context=_merge_context(
                {"operation": operation, "expected": expected, "actual": actual},
                kwargs,
            ),
            suggestions=[
                "The composite Laplacian needs a co-located node set (N = M); "
                "use laplacian_mode = direct otherwise",
            ],
            **kwargs,
        )


class SingularSystemError(VipError):
    """Raised when the saddle system cannot be factored"""

    def __init__(self, reason: str, **kwargs):
        super().__init__(
            f"Saddle system is singular: {reason}",
            ErrorCode.SINGULAR_SYSTEM,
            context=_merge_context({"reason": reason}, kwargs),
            suggestions=[
                "Run realization_check on the virtual points",
                "Raise solver.dense_limit so the rank-revealing path is used",
            ],
            **kwargs,
        )


class NoConvergenceError(VipError):
    """Raised when an iteration stops without meeting its tolerance.

    The last iterate and the history are kept on the exception so callers can
    inspect or continue from them.
    """

    def __init__(
        self,
        method: str,
        iterations: int,
        residual: float,
        last_iterate: Any = None,
        trace: Optional[List[float]] = None,
        **kwargs,
    ):
        self.last_iterate = last_iterate
        self.trace = list(trace or [])
        super().__init__(
            f"{method} did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})",
            ErrorCode.NO_CONVERGENCE,
            context=_merge_context(
                {"method": method, "iterations": iterations, "residual": residual},
                kwargs,
            ),
            suggestions=[
                "Increase max_iter",
                "Lower the relaxation factor",
                "Refine the node set",
            ],
            **kwargs,
        )


class TooLargeError(VipError):
    """Raised when a dense analysis exceeds its size cap"""

    def __init__(self, operation: str, size: int, limit: int, **kwargs):
        super().__init__(
            f"{operation} needs a dense problem of size {size}, limit is {limit}",
            ErrorCode.TOO_LARGE,
            context=_merge_context(
                {"operation": operation, "size": size, "limit": limit}, kwargs
            ),
            suggestions=["Use a coarser spacing h for dense analysis"],
            **kwargs,
        )


class ConfigError(VipError):
    """Raised for invalid run configuration"""

    def __init__(self, reason: str, **kwargs):
        super().__init__(
            f"Invalid configuration: {reason}",
            ErrorCode.CONFIG_ERROR,
            context=_merge_context({"reason": reason}, kwargs),
            suggestions=["Check the config file against configs/*.cfg"],
            **kwargs,
        )


class DataFormatError(VipError):
    """Raised when an input data file cannot be parsed"""

    def __init__(self, path: str, reason: str, **kwargs):
        super().__init__(
            f"Cannot read {path}: {reason}",
            ErrorCode.DATA_FORMAT_ERROR,
            context=_merge_context({"path": path, "reason": reason}, kwargs),
            **kwargs,
        )


# Convenience functions for common error scenarios
def row_failure(error: VipError, row: int, point: Sequence[float]) -> VipError:
    """Attach the failing operator row to a kernel error and return it"""
    error.context.setdefault("row", row)
    error.context.setdefault("eval_point", tuple(float(c) for c in point))
    return error


def composite_needs_colocation(rows: int, nodes: int) -> DimensionMismatchError:
    """Create the error raised when D*D cannot be composed"""
    return DimensionMismatchError(
        "composite Laplacian",
        expected=f"gradient rows per component == node count ({nodes})",
        actual=rows,
    )
