"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operator expects."""


class DomainError(ValueError):
    """Input lies outside the supported domain (e.g. k-space coordinates)."""


class ConfigError(ValueError):
    """Invalid configuration value or combination of values."""


class NumericError(FloatingPointError):
    """A solver or optimizer produced non-finite values."""


class ContainerError(ValueError):
    """A dataset or checkpoint directory is malformed or unsupported."""
