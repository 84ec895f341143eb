"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration is invalid or infeasible."""


class FormatError(ValueError):
    """A file on disk is malformed."""
