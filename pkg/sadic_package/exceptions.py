"""
Exception hierarchy for the S-adic toolkit.

Every class carries the exit code the ``sadic`` command reports for it.
"""


class SAdicError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 4


class InvalidInputError(SAdicError, ValueError):
    """A precondition of an operation does not hold."""

    exit_code = 2


class NonplanarityError(InvalidInputError):
    """Nonplanarity of a map has not been established on the ball."""


class ConditionFailure(InvalidInputError):
    """A hypothesis of the nondivergence estimate failed empirically."""


class EnumerationCapExceeded(SAdicError):
    """An enumeration would produce more points than the configured cap."""

    exit_code = 3

    def __init__(self, estimate, cap, what="enumeration"):
        self.estimate = estimate
        self.cap = cap
        super().__init__(
            f"{what} refused: estimated {estimate:.4g} points exceeds cap {cap}"
        )


class PrecisionError(SAdicError, ArithmeticError):
    """p-adic precision is too small to decide a comparison or congruence."""

    exit_code = 3


class TheoremViolation(SAdicError):
    """An internal invariant guaranteed by a theorem failed."""

    exit_code = 4
