"""Exception types shared across modules."""


class GeometryError(ValueError):
    """Shapes, block sizes, or channel counts do not line up."""


class FormatError(ValueError):
    """A serialized artifact (key, image, model, dataset) is malformed."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File carries an unsupported format version."""


class TruncatedError(FormatError):
    """Stream ended early; `offset` is the byte position where data ran out."""

    def __init__(self, offset: int, wanted: int, got: int):
        self.offset = offset
        super().__init__(
            f"truncated stream at byte {offset}: wanted {wanted} bytes, got {got}"
        )
