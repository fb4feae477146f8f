"""Max-ent deep IRL trajectory forecasting on 2-D grid worlds."""

__version__ = "0.1.0"

from .errors import ConfigError, ConvergenceError

__all__ = ["ConfigError", "ConvergenceError", "__version__"]
