"""Exception types shared across the package."""


class FdgnnError(Exception):
    """Base class for package errors."""


class ConfigError(FdgnnError):
    """Invalid experiment configuration (CLI exit code 2)."""


class DataError(FdgnnError):
    """Invalid or missing dataset / bundle contents (CLI exit code 3)."""
