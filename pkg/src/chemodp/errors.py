"""Exception types shared across the package."""


class ChemoDPError(Exception):
    """Base class for package-specific failures."""


class ConfigError(ChemoDPError):
    """A run configuration is malformed or violates an invariant."""


class NumericsError(ChemoDPError):
    """Base class for numerical failures (divergence, overflow, singularity)."""


class DivergenceError(NumericsError):
    """The fixed-point iteration produced non-finite or runaway values."""


class TrajectoryOverflowError(NumericsError):
    """A simulated trajectory left the numerically safe region."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
