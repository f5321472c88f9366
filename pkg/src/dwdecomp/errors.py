"""Exception hierarchy. The CLI maps each family to one exit code."""


class DwdError(Exception):
    """Base class for all library errors."""

    code = "error"


class ShapeError(DwdError, ValueError):
    code = "shape"


class InputError(DwdError, ValueError):
    code = "input"


class NumericError(DwdError, ArithmeticError):
    code = "numeric"


class DegenerateInputError(NumericError):
    """Raised when an operation receives an all-zero matrix it cannot use."""

    code = "degenerate"


class UndefinedMetricError(NumericError):
    code = "undefined-metric"


class FormatError(DwdError):
    """Container load failures."""

    code = "format"


class VersionMismatchError(FormatError):
    code = "version"


class ChecksumError(FormatError):
    code = "checksum"


class TruncatedBufferError(FormatError):
    code = "truncated"
