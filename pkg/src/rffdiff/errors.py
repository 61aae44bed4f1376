"""Exception types shared across the package."""


class RffdiffError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RffdiffError):
    """Invalid configuration value or unsupported parameter combination."""


class SignalStructureError(RffdiffError):
    """Input signal does not have the structure an operation requires."""


class PlanError(RffdiffError):
    """Invalid denoising plan parameters."""


class DataFormatError(RffdiffError):
    """Malformed persisted data. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(DataFormatError):
    """Stored checksum does not match recomputed content checksum."""
