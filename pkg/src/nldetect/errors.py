"""Exception hierarchy shared across the toolkit."""


class NLDetectError(Exception):
    """Base class for all toolkit errors."""


class DomainError(NLDetectError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class NumericError(NLDetectError, FloatingPointError):
    """Non-finite values appeared in a state or a computation."""


class InstabilityError(NumericError):
    """A time integration blew up."""

    def __init__(self, message, dt_int=None):
        super().__init__(message)
        self.dt_int = dt_int


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, model=None):
        super().__init__(message)
        self.epoch = epoch
        self.model = model


class ContractError(NLDetectError, ValueError):
    """Shapes or call order violate a layer/network contract."""


class ConfigError(NLDetectError, ValueError):
    """Invalid experiment or architecture configuration."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class ParseError(NLDetectError, ValueError):
    """Malformed delimited-text input."""

    def __init__(self, message, row=None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


class FileFormatError(NLDetectError, IOError):
    """Binary file does not carry the expected magic bytes or layout."""


class VersionMismatchError(FileFormatError):
    """Binary file was written by an unsupported format version."""


class TruncatedFileError(FileFormatError):
    """Binary file ended before all declared content was read."""


class ChecksumError(FileFormatError):
    """Stored CRC32 does not match the file content."""
