"""Exception and warning types shared across the package."""


class HoifError(Exception):
    """Base class for package errors."""


class InputError(HoifError, ValueError):
    """Malformed user input (files, configuration, shapes)."""


class NotPositiveDefinite(HoifError, ArithmeticError):
    """A Gram matrix failed its Cholesky factorization."""


class IllConditioned(UserWarning):
    """Gram condition number above the configured threshold."""


class IllConditionedError(HoifError, ArithmeticError):
    """Raised instead of the warning when strict conditioning is requested."""


class UnsupportedOrder(HoifError, ValueError):
    """U-statistic order outside what the exact engine supports."""


class DegenerateScale(HoifError, ArithmeticError):
    """A test was asked to standardize by a zero standard error."""


class BudgetExceeded(HoifError, RuntimeError):
    """A computation would exceed its configured work budget."""
