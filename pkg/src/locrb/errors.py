"""Exception types shared across the package."""


class LocrbError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LocrbError):
    """Invalid build or runtime configuration (bad counts, keys, modes)."""


class DataError(LocrbError):
    """Invalid problem data (non-SPD diffusion, non-finite samples)."""


class ParameterError(LocrbError):
    """Parameter outside the admissible set."""


class ParameterIncompatibleError(ParameterError):
    """Coefficient ratio undefined (positive over zero); the min-theta bound is unusable."""


class NumericalError(LocrbError):
    """A linear solve failed to reach the required accuracy."""
