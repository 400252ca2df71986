"""Exception types shared across the package."""


class FormatError(Exception):
    """A file or byte payload does not conform to one of our formats."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedError(FormatError):
    """The payload ends before the declared content is complete."""


class InvalidPayloadError(FormatError):
    """The payload parsed, but its content violates a data invariant."""


class NumericError(RuntimeError):
    """A computation produced non-finite values (NaN/inf loss, overflow)."""
