"""Exception types shared across the package."""


class ParefineError(Exception):
    """Base class for all package errors."""


class DimensionError(ParefineError):
    """Tensor shapes are incompatible for the requested operation."""


class ParameterError(ParefineError):
    """An operation was called with an unsupported hyper-parameter."""


class NumericError(ParefineError):
    """A non-finite value appeared where the pipeline requires finite data."""


class DataError(ParefineError):
    """Dataset directory or sample files are missing or inconsistent."""


class PnmFormatError(ParefineError):
    """Malformed PNM file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedPnmError(ParefineError):
    """Valid PNM, but a variant this codec does not handle (e.g. maxval != 255)."""


class CheckpointError(ParefineError):
    """Corrupt or incompatible checkpoint file. Carries the byte offset."""

    def __init__(self, message: str, offset: int = -1):
        if offset >= 0:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
