"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: config errors exit 1,
data errors exit 2, numerical failures exit 3.
"""


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad value, inconsistent settings."""


class DataError(Exception):
    """Malformed or unreadable input data (sequence files, manifests, checkpoints)."""


class NumericalError(Exception):
    """Numerical failure: divergence, non-finite values, failed verification."""


class ShapeError(ValueError):
    """Operands with incompatible shapes passed to a tensor operation."""
