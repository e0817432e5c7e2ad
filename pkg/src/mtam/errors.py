"""Exception types shared across the package.

The CLI maps these onto process exit codes: data problems exit with 2,
numeric failures with 3 and checkpoint/vocabulary mismatches with 4.
"""


class MTAMError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DimensionError(MTAMError, ValueError):
    exit_code = 3


class DomainError(MTAMError, ValueError):
    exit_code = 3


class DegenerateRowError(MTAMError, ValueError):
    """A softmax row with no unmasked entry."""

    exit_code = 3


class ContractError(MTAMError, RuntimeError):
    exit_code = 3


class NumericError(MTAMError, ArithmeticError):
    exit_code = 3


class TableIndexError(MTAMError, IndexError):
    exit_code = 2


class OrderingError(MTAMError, ValueError):
    """Timestamps going backwards where a non-decreasing order is required."""

    exit_code = 2


class DataError(MTAMError, ValueError):
    exit_code = 2


class FormatError(DataError):
    pass


class IngestionError(DataError):
    pass


class CompatibilityError(MTAMError, ValueError):
    exit_code = 4
