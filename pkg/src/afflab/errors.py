"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-range input (CLI exit code 2)."""


class BudgetError(RuntimeError):
    """Word enumeration would exceed the evaluation budget (CLI exit code 3)."""

    def __init__(self, message, suggested_n=None, cost=None):
        super().__init__(message)
        self.suggested_n = suggested_n
        self.cost = cost


class ModeError(RuntimeError):
    """A certified computation was requested without the oracle it needs."""


class UnsupportedError(RuntimeError):
    """The operation is not available for this kind of system."""


class InvariantViolation(AssertionError):
    """A proven inequality failed numerically beyond its tolerance."""
