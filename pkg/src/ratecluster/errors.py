"""Exception types shared across the toolkit.

The CLI maps these onto exit codes (config 2, data/format 3, numerical 4);
library callers just catch the classes.
"""


class RateClusterError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RateClusterError):
    """An input violates a documented invariant (shape, finiteness, range)."""


class ConfigError(RateClusterError):
    """A configuration value is inconsistent or out of range."""


class FormatError(RateClusterError):
    """A file does not follow its declared binary or JSON layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (first bad byte at offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncationError(FormatError):
    """A file ends before the payload its header promises."""


class ChecksumError(FormatError):
    """Stored checksum does not match the payload read back."""


class NumericalError(RateClusterError):
    """A computation produced non-finite values; carries diagnostics."""

    def __init__(self, message: str, **diagnostics):
        if diagnostics:
            detail = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
            message = f"{message} [{detail}]"
        super().__init__(message)
        self.diagnostics = diagnostics
