"""Exceptions raised by the dgf library.

Every error derives from DgfError and from the builtin exception it
specialises, so callers may catch either.
"""


class DgfError(Exception):
    """Base class for all library errors."""


class InvalidArgument(DgfError, ValueError):
    """A dimension, shape, channel count or parameter is not acceptable."""


class DomainError(DgfError, ArithmeticError):
    """An operation left the real numbers: division by zero or a non-finite result."""


class DegenerateWindowError(DomainError):
    """eps is zero and some filter window has zero guidance variance."""


class TrainingError(DgfError, RuntimeError):
    """Training diverged or produced a non-finite gradient."""


class OracleError(DgfError, ArithmeticError):
    """A numerical oracle evaluated its function to a non-finite value."""


class StorageError(DgfError, OSError):
    """A tensor container or image file could not be read or written."""
