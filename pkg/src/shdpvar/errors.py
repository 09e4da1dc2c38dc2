"""Exception hierarchy shared by every module."""


class ShdpError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(ShdpError, ValueError):
    """A distribution or model parameter is outside its domain."""


class ShapeError(ShdpError, ValueError):
    """Array dimensions do not conform."""


class InsufficientHistoryError(ShdpError, ValueError):
    """Fewer past observations than the autoregressive order requires."""


class InsufficientDataError(ShdpError, ValueError):
    """Not enough trials or frames to carry out the operation."""


class ConfigurationError(ShdpError, ValueError):
    """Inconsistent or incomplete configuration."""


class DataError(ShdpError, ValueError):
    """Malformed input data. ``row`` is the 1-based file row when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NumericalError(ShdpError, ArithmeticError):
    """A computation produced non-finite values or a failed factorization."""


class LibraryLoadError(ShdpError):
    """A persisted skill library could not be read."""


class FormatVersionError(LibraryLoadError):
    pass


class ChecksumError(LibraryLoadError):
    pass
