"""Exception types shared across the package."""


class IGSDError(Exception):
    """Base class for all package errors."""


class ConfigError(IGSDError, ValueError):
    pass


class FormatError(IGSDError, ValueError):
    """Malformed dataset file."""


class ShapeError(IGSDError, ValueError):
    pass


class NumericalError(IGSDError, ArithmeticError):
    """Non-finite value or degenerate computation (zero norm, singular system)."""


class StateError(IGSDError, RuntimeError):
    pass


class SamplerError(IGSDError, RuntimeError):
    """Batch sampler cannot satisfy its composition constraints."""


class DegenerateError(IGSDError, ValueError):
    """Training data too degenerate for the requested fit (e.g. one class)."""
