"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value is out of range or unknown."""


class DataError(ValueError):
    """Input data violates a contract (unsorted timestamps, bad ids, ...)."""


class IngestError(DataError):
    """Too many malformed rows in an input file."""


class NondeterministicError(RuntimeError):
    """A function expected to be deterministic returned different values."""


class DivergenceError(FloatingPointError):
    """Loss or gradients became non-finite during training."""
