"""Exception types shared across the package.

CLI exit codes: ConfigError -> 2, NumericError -> 3, CheckFailure -> 4.
"""


class AceLabError(Exception):
    """Base class for all package errors."""


class DimensionError(AceLabError):
    """Array shapes do not match the declared layer/model dimensions."""


class DomainError(AceLabError):
    """Value outside the operation's domain (non-finite input, bad head index)."""


class ConfigError(AceLabError):
    """Invalid configuration (file, spec, or scorer construction)."""


class TrainingError(AceLabError):
    """Training diverged (non-finite loss)."""


class NumericError(AceLabError):
    """Non-finite value produced where a finite one is required."""


class ZeroCoverageError(AceLabError):
    """Selective risk requested at a threshold that covers no items."""


class CheckFailure(AceLabError):
    """A bench acceptance check failed."""
