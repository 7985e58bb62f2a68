"""Exception types raised across the package."""


class CreditLossError(Exception):
    """Base class for all package errors."""


class DomainError(CreditLossError, ValueError):
    """An argument lies outside the domain of a mathematical function."""


class InsufficientDataError(CreditLossError, ValueError):
    """Too few observations to estimate a quantity."""


class DegenerateDataError(CreditLossError, ValueError):
    """Observations carry no information (e.g. all equal)."""


class InputValidationError(CreditLossError, ValueError):
    """A record in an input file failed validation.

    ``source`` and ``row`` are kept so callers can point at the offending
    line. ``row`` counts data rows from 1 (the header is not counted).
    """

    def __init__(self, message, source=None, row=None):
        self.source = source
        self.row = row
        where = []
        if source is not None:
            where.append(str(source))
        if row is not None:
            where.append(f"row {row}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class MissingCalibrationError(CreditLossError):
    """A simulation mode was requested without its calibration bundle."""


class NumericalError(CreditLossError, ArithmeticError):
    """A numerical routine failed (non-finite result, failed factorization)."""
