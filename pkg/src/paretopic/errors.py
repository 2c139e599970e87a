"""Shared exception types, mapped onto CLI exit codes."""


class ParetopicError(Exception):
    """Base class for all library errors."""


class ConfigError(ParetopicError):
    """Invalid configuration or arguments (CLI exit code 1)."""


class DataError(ParetopicError):
    """Bad input data: files, formats, vocabulary mismatches (CLI exit code 2)."""


class NumericError(ParetopicError):
    """Numeric failure at runtime: non-finite loss, zero norms (CLI exit code 3)."""
