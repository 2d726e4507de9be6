"""Exception types shared across the package."""

from __future__ import annotations


class IncbfError(Exception):
    """Base class for all package errors."""


class NumericalError(IncbfError):
    """An iterative routine failed to converge or a factorization broke down."""


class InfeasibleError(IncbfError):
    """A program or matrix equation has no admissible solution.

    ``conflicting`` lists the indices of the constraints that cannot be
    satisfied together, when the caller can name them.
    """

    def __init__(self, message: str, conflicting: tuple[int, ...] = ()):
        super().__init__(message)
        self.conflicting = tuple(conflicting)


class IntegrationError(IncbfError):
    def __init__(self, t: float, x):
        super().__init__(f"non-finite derivative at t={t!r}, x={list(x)!r}")
        self.t = t
        self.x = x


class SingularityError(IncbfError):
    """Input matrix cannot be inverted for the incremental control law."""


class ConfigError(IncbfError):
    """Invalid scenario configuration or sensor bound violation."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        prefix = ""
        if line is not None:
            prefix = f"line {line}: "
        elif key is not None:
            prefix = f"{key}: "
        super().__init__(prefix + message)
        self.key = key
        self.line = line
