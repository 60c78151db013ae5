"""Exception types shared across the package."""


class SystemValidationError(ValueError):
    """A system description failed validation (parse error, broken Hermiticity, ...)."""


class TailUndecidableError(ValueError):
    """A gap query past the declared eigenvalue data cannot be decided.

    Raised when neither an eigenvalue rule nor a tail declaration makes the
    quantifier "for every level l > n" checkable.
    """


class ChainError(ValueError):
    """No connectedness chain exists among the requested levels."""


class PlanningError(RuntimeError):
    """Word planning failed (no rotation route, unrealizable target, ...)."""


class PulseVerificationError(RuntimeError):
    """A generated pulse failed its simulation check after all retries."""

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class PreconditionError(ValueError):
    """An operation was called outside its stated preconditions."""
