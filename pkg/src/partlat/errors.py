"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input/format problems exit 2,
numeric failures exit 3 (usage errors exit 1 before any of these are
raised).
"""


class PartlatError(Exception):
    """Base class for all partlat errors."""


class DimensionError(PartlatError):
    """Shapes or widths of operands do not line up."""


class NumericError(PartlatError):
    """Non-finite values or a diverging computation."""


class FormatError(PartlatError):
    """A file does not conform to its declared format."""


class ConfigError(PartlatError):
    """Invalid configuration value or unknown key."""


class InputError(PartlatError):
    """Semantically invalid input (unknown ids, empty clouds, ...)."""
