"""Dim moving-target detection from pixel temporal signals.

The pipeline reconstructs every pixel's intensity series with a 1D
encoder-decoder trained on synthetic Gaussian pulses, thresholds temporal
peaks into points, and links the points into trajectories.
"""
from .errors import (
    ConfigError, DegenerateBackgroundError, FormatError, MissingInputError, NumericalError, RangeError,
    StructuralError, TpsError,
)
from .rng import DEFAULT_SEED

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateBackgroundError", "FormatError", "MissingInputError", "NumericalError", "RangeError",
    "StructuralError", "TpsError", "DEFAULT_SEED", "__version__",
]
