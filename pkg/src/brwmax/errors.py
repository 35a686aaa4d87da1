"""Exception hierarchy shared by every subpackage."""

from __future__ import annotations


class BrwError(Exception):
    """Base class for all errors raised by brwmax."""


class DomainError(BrwError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ModeError(DomainError):
    """A model is subcritical where supercritical is required, or vice versa."""


class ConfigurationError(BrwError, ValueError):
    """Solver or simulation settings are inconsistent with the request."""


class ConvergenceError(BrwError, RuntimeError):
    """An iterative method exhausted its budget before meeting its tolerance."""

    def __init__(self, message: str, last_gap: float | None = None):
        super().__init__(message)
        self.last_gap = last_gap


class ModelValidationError(BrwError, ValueError):
    """A model definition violates one or more invariants.

    All violations found are collected in :attr:`violations` so callers can
    report them together instead of fixing them one at a time.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
