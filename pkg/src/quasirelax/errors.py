"""Exception hierarchy shared by all quasirelax modules."""

from __future__ import annotations


class QuasirelaxError(Exception):
    """Base class for all errors raised by this package."""

    kind = "internal-error"


class InvalidArgumentError(QuasirelaxError, ValueError):
    """An argument violates a documented precondition."""

    kind = "invalid-argument"


class BudgetExceededError(QuasirelaxError, RuntimeError):
    """A grid or work budget would be exceeded."""

    kind = "budget-exceeded"


class PreconditionError(QuasirelaxError, RuntimeError):
    """A checked mathematical precondition failed; carries a witness."""

    kind = "precondition-failed"

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class InternalCheckError(QuasirelaxError, RuntimeError):
    """An internal invariant was violated (solver bug, not user error)."""

    kind = "internal-error"
