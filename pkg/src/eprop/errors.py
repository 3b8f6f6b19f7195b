"""Exception types raised across the package."""


class EpropError(Exception):
    """Base class for all package errors."""


class NumericInputError(EpropError, ValueError):
    """A non-finite value reached a state update."""


class ShapeError(EpropError, ValueError):
    pass


class ConfigError(EpropError, ValueError):
    pass


class InputError(EpropError, ValueError):
    """Empty or otherwise unusable sample data."""


class IndexingError(EpropError):
    """The corpus directory does not have the expected layout."""

    def __init__(self, message, paths=()):
        self.paths = list(paths)
        if self.paths:
            message = message + ":\n  " + "\n  ".join(str(p) for p in self.paths)
        super().__init__(message)


class FormatError(EpropError, ValueError):
    """Unsupported or malformed file contents."""


class CacheError(EpropError):
    pass


class OracleSizeError(EpropError, ValueError):
    pass
