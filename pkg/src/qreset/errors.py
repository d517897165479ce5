"""Exception types shared across the package."""


class QResetError(Exception):
    """Base class for all errors raised by :mod:`qreset`."""


class InputDomainError(QResetError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ParameterError(QResetError, ValueError):
    """A protocol or schedule parameter violates its constraints."""


class SeriesLengthError(QResetError, IndexError):
    """A window or index exceeds the length of a computed series."""


class DivergentFdtError(QResetError, ArithmeticError):
    """The mean first-detection time is infinite (detection is not certain)."""


class FitError(QResetError, ValueError):
    """A least-squares fit is rank deficient or otherwise ill posed."""


class BudgetError(QResetError, ValueError):
    """An exhaustive enumeration would exceed its size budget."""
