"""Unsupervised image deblurring from unpaired data via diffusion-generated texture priors."""

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericalError,
    TexDeblurError,
)

__version__ = "0.1.0"

__all__ = [
    "TexDeblurError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "CheckpointError",
    "__version__",
]
