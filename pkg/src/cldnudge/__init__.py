"""Reconstruction of two-shape particle size distributions from chord length data."""

__version__ = "0.1.0"

from .estimators import BFNObserver, CLDTransformer  # noqa: E402
from .exceptions import ConfigurationError, NumericalAbort  # noqa: E402

__all__ = ["BFNObserver", "CLDTransformer", "ConfigurationError", "NumericalAbort", "__version__"]
