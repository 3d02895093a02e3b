"""Exception hierarchy shared by every module.

Each class maps onto one of the CLI exit codes: usage/config problems exit
with 2, data problems with 3 and numeric failures with 4.
"""

from __future__ import annotations


class MGAEError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(MGAEError, ValueError):
    exit_code = 2


class ContractError(MGAEError, ValueError):
    """A documented precondition of an operation was violated."""

    exit_code = 2


class DimensionError(MGAEError, ValueError):
    exit_code = 3


class DataError(MGAEError, ValueError):
    exit_code = 3


class ParseError(DataError):
    pass


class RangeError(DataError):
    pass


class IntegrityError(DataError):
    pass


class SamplingError(MGAEError, ValueError):
    exit_code = 3


class DegenerateMaskError(ConfigError):
    """The mask would contain no edges, leaving nothing to reconstruct."""


class StratificationError(DataError):
    pass


class NumericError(MGAEError, ArithmeticError):
    exit_code = 4
