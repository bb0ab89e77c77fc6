"""Shared error types mapped to CLI exit codes."""

__all__ = ["ConfigError", "DataError", "DivergenceError", "EXIT_CODES"]


class ConfigError(ValueError):
    """Invalid configuration (exit code 2)."""


class DataError(ValueError):
    """Dataset, manifest or class-table problem (exit code 3)."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values (exit code 4)."""


EXIT_CODES = {ConfigError: 2, DataError: 3, DivergenceError: 4}
