"""Exception types raised across the package."""


class ShdoaError(Exception):
    """Base class for every error raised by shdoa."""


class InvalidDegreeError(ShdoaError, ValueError):
    pass


class InvalidOrderError(ShdoaError, ValueError):
    pass


class TruncationError(ShdoaError, ValueError):
    pass


class ApplicabilityError(ShdoaError, ValueError):
    """Raised when a small-motion approximation is requested outside its range."""


class UnsupportedGeometryError(ShdoaError, ValueError):
    pass


class FormatError(ShdoaError, ValueError):
    """A steering, trajectory or audio file failed validation.

    The message always names the offending location (line, row, field).
    """


class InsufficientDataError(ShdoaError, ValueError):
    pass


class ConfigurationError(ShdoaError, ValueError):
    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DegenerateSystemError(ShdoaError, ArithmeticError):
    pass


class UndefinedRankError(ShdoaError, ValueError):
    pass


class InvalidSourceCountError(ShdoaError, ValueError):
    pass


class AliasingError(ShdoaError, ValueError):
    pass


class UndefinedSNRError(ShdoaError, ValueError):
    pass
