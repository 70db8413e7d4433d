"""Exception hierarchy shared by the library and the CLI."""


class HetGPError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(HetGPError, ValueError):
    """Invalid configuration or parameter values."""

    exit_code = 2


class InputIOError(HetGPError, OSError):
    """A file could not be read or written."""

    exit_code = 3


class NumericalError(HetGPError, ArithmeticError):
    """A covariance matrix failed to factorize even after jitter."""

    exit_code = 4


class DataError(HetGPError, ValueError):
    """Malformed or degenerate data (non-finite values, empty sets, ...)."""

    exit_code = 5
