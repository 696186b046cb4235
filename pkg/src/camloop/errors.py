"""Shared exception types.

Everything raised on bad input data or bad on-disk state derives from
DataError so the CLI can map it to a single exit code.
"""


class CamloopError(Exception):
    """Base class for all package-specific errors."""


class DataError(CamloopError):
    """Invalid input data, file contents, or on-disk project state."""


class UsageError(CamloopError):
    """Invalid command-line invocation."""
