"""Exception hierarchy for the lab.

Everything derives from ``ValueError`` through :class:`AALabError` so callers
that only guard against bad input keep working.
"""

from typing import List, Optional


class AALabError(ValueError):
    """Base class for lab errors."""


class ConfigurationError(AALabError):
    """Configuration could not be parsed, named an unknown key, or failed validation.

    Attributes:
        violations: Every violated rule, in the order they were found.
    """

    def __init__(self, message: str, violations: Optional[List[str]] = None) -> None:
        self.violations = list(violations or [])
        if self.violations:
            message = message + "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


class AnalyticsDomainError(AALabError):
    """An analytic formula was evaluated outside the range where it is defined."""


class LinearSolverError(AALabError):
    """The conjugate-gradient Helmholtz solve did not converge."""

    def __init__(self, iterations: int, residual: float, tolerance: float) -> None:
        self.iterations = iterations
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"CG did not converge after {iterations} iterations: "
            f"relative residual {residual:.3e} > tolerance {tolerance:.3e}"
        )


class NegativeStateError(AALabError):
    """The homogeneous RK4 oracle produced a component below the tolerance."""


class TrajectoryMismatchError(AALabError):
    """Two stored trajectories do not share grid or sampling times."""


class SnapshotFormatError(AALabError):
    """A snapshot file has a malformed header or payload."""
