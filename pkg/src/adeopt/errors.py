"""Exception hierarchy.

Validation problems (bad input, inconsistent sizes) derive from
``ValidationError``; failures of the numerics themselves derive from
``NumericalError``.  The CLI maps the two families to exit codes 1 and 2.
"""


class AdeoptError(Exception):
    pass


class ValidationError(AdeoptError, ValueError):
    pass


class NumericalError(AdeoptError, ArithmeticError):
    pass


class CapacityError(ValidationError):
    """Requested tensor would exceed the configured entry budget."""


class DimensionMismatch(ValidationError):
    pass


class BasisMismatch(ValidationError):
    pass


class InfeasibleInit(ValidationError):
    pass


class UnstableError(NumericalError):
    """Coefficients blew up during time stepping."""


class BoundViolation(NumericalError):
    """An advection-matrix entry exceeded its theoretical bound.

    ``violations`` holds ``(row, col, value, bound)`` tuples, where row and
    col are ``(m, n)`` / ``(i, j)`` mode pairs.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)
