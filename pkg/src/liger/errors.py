"""Exception hierarchy shared by every module."""


class LigerError(Exception):
    """Base class for all engine errors."""


class FormatError(LigerError):
    """A file does not match its declared on-disk layout."""


class ValidationError(LigerError, ValueError):
    """Data is well-formed but violates a domain invariant."""


class ShapeError(LigerError, ValueError):
    """Array sizes disagree across inputs."""


class ArgumentError(LigerError, ValueError):
    """An argument is outside the range an operation accepts."""
