"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Inputs are inconsistent in shape, support or tree structure."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to produce a finite or stable result."""


class ConfigError(ValueError):
    """An experiment or estimator configuration is invalid."""
