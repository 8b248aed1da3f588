"""Scale-invariant ternary MERA with Wilson-chain defect algorithms."""

__version__ = "0.1.0"

from .errors import ConfigError, ConvergenceError, ShapeError

__all__ = ["ConfigError", "ConvergenceError", "ShapeError", "__version__"]
