"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters for scripted use.
"""


class VinebcError(Exception):
    """Base class for all package errors."""


class ConfigError(VinebcError):
    """Invalid configuration: unknown keys, bad values, inconsistent options."""


class DataError(VinebcError):
    """Invalid or incomplete input data."""


class NumericalError(VinebcError):
    """A numerical routine failed to converge or produced non-finite output."""
