class ConfigurationError(ValueError):
    """Invalid grids, shapes or scenario settings."""


class NumericalAbort(RuntimeError):
    """An observer pass produced non-finite values."""
