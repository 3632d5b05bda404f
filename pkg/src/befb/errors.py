"""Exception hierarchy shared by every module in the package."""


class BEFBError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(BEFBError, ValueError):
    """Operand shapes are incompatible."""


class StaleCacheError(BEFBError, RuntimeError):
    """A backward pass was given a cache from an outdated forward pass."""


class DataFormatError(BEFBError, ValueError):
    """A dataset file is malformed."""


class MagicNumberError(DataFormatError):
    def __init__(self, path, expected, actual):
        self.path, self.expected, self.actual = path, expected, actual
        super().__init__(
            f"{path}: bad magic number, expected 0x{expected:08x}, got 0x{actual:08x}"
        )


class TruncatedFileError(DataFormatError):
    def __init__(self, path, offset, detail=""):
        self.path, self.offset = path, offset
        msg = f"{path}: truncated at byte offset {offset}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class CountMismatchError(DataFormatError):
    pass


class CheckpointError(BEFBError, ValueError):
    """A checkpoint file cannot be decoded."""


class CheckpointVersionError(CheckpointError):
    def __init__(self, expected, actual):
        self.expected, self.actual = expected, actual
        super().__init__(
            f"unsupported checkpoint version {actual} (this build reads version {expected})"
        )


class ConfigError(BEFBError, ValueError):
    """A run configuration is invalid. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class NonFiniteLossError(BEFBError, FloatingPointError):
    def __init__(self, epoch, batch_index, value):
        self.epoch, self.batch_index, self.value = epoch, batch_index, value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch index {batch_index}"
        )
