"""Exception hierarchy shared by every fracsde module.

The CLI maps these onto exit codes: :class:`ConfigError` -> 2,
:class:`CapacityError` -> 4, any other :class:`FsdeError` -> 3.
"""

from __future__ import annotations


class FsdeError(Exception):
    """Base class for all library errors."""


class DomainError(FsdeError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class RangeError(FsdeError, ValueError):
    """An argument is valid in principle but outside the supported evaluation regime."""


class CapacityError(FsdeError, MemoryError):
    """A requested allocation exceeds the configured memory cap."""


class EvaluationError(FsdeError, ArithmeticError):
    """A coefficient function returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class BlowUpError(FsdeError, ArithmeticError):
    """The time stepper produced a non-finite state."""

    def __init__(self, path, step, last_state):
        self.path = int(path)
        self.step = int(step)
        self.last_state = last_state
        super().__init__(
            f"non-finite state on path {self.path} at step {self.step}; "
            f"last finite state {list(map(float, last_state))}"
        )


class ConvergenceError(FsdeError, ArithmeticError):
    """An iteration did not reach its tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = float(residual)


class AveragingDivergenceError(FsdeError, ArithmeticError):
    """A coefficient has no detectable time average (the Cesaro certificate never held)."""

    def __init__(self, message, gap=None, horizon=None):
        super().__init__(message)
        self.gap = gap
        self.horizon = horizon


class ConfigError(FsdeError):
    """Malformed or invalid run configuration, optionally located by line and field."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field
