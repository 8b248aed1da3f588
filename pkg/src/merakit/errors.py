"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor legs that were asked to contract (or pair) have unequal dims."""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""
