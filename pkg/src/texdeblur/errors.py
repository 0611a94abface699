"""Exception types shared across the package.

The CLI maps these onto its exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class TexDeblurError(Exception):
    """Base class for package errors."""


class ConfigError(TexDeblurError):
    """Invalid configuration file, key, or value."""


class DataError(TexDeblurError):
    """Invalid or unusable input data (images, manifests, splits)."""


class NumericalError(TexDeblurError):
    """Non-finite values or degenerate numerical state."""


class CheckpointError(TexDeblurError):
    """Unreadable, corrupted, or version-incompatible checkpoint."""
