class ConfigError(ValueError):
    """Bad shapes, bad arguments, malformed configs or files."""


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of its sweep budget."""
