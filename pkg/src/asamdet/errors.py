"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class GeometryError(ValueError):
    """Invalid spatial geometry (degenerate boxes, kernels larger than input, ...)."""


class NumericError(ArithmeticError):
    """A non-finite value was produced or supplied."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""
