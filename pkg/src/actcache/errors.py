"""Exception hierarchy shared by every module in the package."""


class ActCacheError(Exception):
    """Base class for all errors raised by this package."""


class InvalidShapeError(ActCacheError):
    """A tensor's rank or dimensions are unusable for the requested operation."""


class InvalidValueError(ActCacheError):
    """Input values violate a precondition (e.g. non-finite floats)."""


class InvalidConfigError(ActCacheError):
    """A parameter is outside its documented range."""


class DegenerateVectorError(ActCacheError):
    """A similarity was requested for a zero-norm vector."""


class ShapeMismatchError(ActCacheError):
    """Two inputs that must agree in shape do not."""


class DecodeError(ActCacheError):
    """An encoded payload is truncated, inconsistent, or otherwise unreadable."""


class FormatError(ActCacheError):
    """A file is not a cache file of a supported version."""


class CorruptionError(ActCacheError):
    """Stored bytes fail their checksum."""


class AugmentationUnavailableError(ActCacheError):
    """A sample carries no stored augmentation payload to apply."""


class InsufficientDataError(ActCacheError):
    """Too few samples for the requested operation."""
