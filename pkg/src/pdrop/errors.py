"""Exception types shared across the package."""


class PdropError(Exception):
    """Base class for all library errors."""


class ShapeError(PdropError, ValueError):
    """Operand dimensions do not agree."""


class ConfigError(PdropError, ValueError):
    """Invalid configuration, schedule, or strategy parameters."""


class InputError(PdropError, ValueError):
    """Malformed sequence, fixture, or serialized data."""


class BoundsError(PdropError, IndexError):
    """Index or count outside the valid range."""
