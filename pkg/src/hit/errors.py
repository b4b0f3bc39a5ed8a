"""Exception types shared across the package."""


class HitError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(HitError, ValueError):
    pass


class ContractError(HitError):
    """A documented precondition of an operation was violated."""


class DegenerateInputError(HitError, ValueError):
    """Zero-norm vectors, empty sequences and similar inputs with no defined result."""


class ConfigError(HitError, ValueError):
    pass


class InputError(HitError, ValueError):
    """Malformed model input: bad token ids, wrong expert count, over-long sequences."""


class FormatError(HitError):
    """A binary file does not follow the HITF layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class DimensionOverflowError(FormatError):
    pass
