"""Exception types shared across the package."""


class GridMismatchError(ValueError):
    """Two fields live on different grids."""


class StabilityError(ValueError):
    """A time step exceeds the configured stability bound."""


class NumericalBlowup(RuntimeError):
    """A run produced NaN or Inf values."""

    def __init__(self, message, step=None, t=None, state=None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.state = state


class ConfigError(ValueError):
    """Invalid run configuration."""
