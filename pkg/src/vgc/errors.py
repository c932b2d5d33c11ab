"""Exception types shared across the codec."""


class VgcError(Exception):
    """Base class for codec failures."""


class DecodeError(VgcError):
    """Corrupt, truncated, or otherwise undecodable payload."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigMismatchError(VgcError):
    """Stream/checkpoint architecture fingerprints disagree."""


class UnsupportedFormatError(VgcError):
    """Image file format outside the supported set."""
