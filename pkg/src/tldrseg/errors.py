"""Exception hierarchy shared by every module."""


class TLDRError(Exception):
    """Base class for all package errors."""


class DimensionError(TLDRError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(TLDRError, ArithmeticError):
    """A non-finite value was produced or supplied."""


class ContractError(TLDRError, ValueError):
    """A documented precondition was violated."""


class ConfigError(TLDRError, ValueError):
    """Invalid configuration value."""


class LabelError(TLDRError, ValueError):
    """A label lies outside the valid class range."""


class DegenerateBatchError(TLDRError, ValueError):
    """Every pixel of a batch is ignored."""


class MetricError(TLDRError, ValueError):
    """A metric was requested on empty input."""


class FormatError(TLDRError, ValueError):
    """A serialized file is malformed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IncompatibleVersionError(FormatError):
    """A checkpoint was written by an incompatible format version."""
