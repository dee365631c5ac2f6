"""
errors.py — Exception hierarchy for the estimation toolkit

Every module raises a subclass of EstimationError so callers (the harness,
the CLI and the HTTP layer) can catch one type and still inspect the
offending values through attributes.
"""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for toolkit errors."""


# ---------------------------------------------------------------------------
# Argument validation
# ---------------------------------------------------------------------------

class InvalidDimensionError(EstimationError, ValueError):
    def __init__(self, name: str, value: object) -> None:
        self.name = name
        self.value = value
        super().__init__(f"Invalid dimension {name}={value!r}.")


class InvalidArgumentError(EstimationError, ValueError):
    def __init__(self, name: str, value: object, reason: str) -> None:
        self.name = name
        self.value = value
        self.reason = reason
        super().__init__(f"Invalid {name}={value!r}: {reason}.")


class AliasingError(EstimationError, ValueError):
    def __init__(self, epsilon: float) -> None:
        self.epsilon = epsilon
        super().__init__(
            f"Digital CFO {epsilon:.6f} rad/sample aliases (|eps| >= pi)."
        )


class DegenerateInputError(EstimationError, ValueError):
    def __init__(self, what: str) -> None:
        self.what = what
        super().__init__(f"Degenerate input: {what}.")


# ---------------------------------------------------------------------------
# Numerical failures
# ---------------------------------------------------------------------------

class RankDeficientTrainingError(EstimationError):
    def __init__(self, rank: int, needed: int) -> None:
        self.rank = rank
        self.needed = needed
        super().__init__(
            f"Training matrix has rank {rank}, least squares needs {needed}."
        )


class NonCirculantTrainingError(EstimationError, ValueError):
    def __init__(self, residual: float) -> None:
        self.residual = residual
        super().__init__(
            f"Training block is not circulant (relative residual {residual:.3e})."
        )


class SolverDivergenceError(EstimationError):
    def __init__(self, attempts: int) -> None:
        self.attempts = attempts
        super().__init__(
            f"PBiGAMP produced a non-finite state in all {attempts} attempts."
        )


class EstimationFailedError(EstimationError):
    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"CFO estimation failed: {reason}.")


class TensorTooLargeError(EstimationError):
    def __init__(self, elements: int, limit: int) -> None:
        self.elements = elements
        self.limit = limit
        super().__init__(
            f"Tensor would hold {elements} elements (limit {limit})."
        )


class QuadratureError(EstimationError):
    def __init__(self, detail: str) -> None:
        self.detail = detail
        super().__init__(f"Numerical integration did not converge: {detail}")
