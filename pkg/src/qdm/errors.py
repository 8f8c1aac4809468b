"""Exception hierarchy shared by the library and the command line."""


class QDMError(Exception):
    """Base class for all errors raised by :mod:`qdm`."""

    exit_code = 1


class UsageError(QDMError, ValueError):
    """Invalid arguments or inconsistent inputs supplied by the caller."""

    exit_code = 2


class ConfigError(UsageError):
    """A configuration value is missing, unknown or out of range."""


class FormatError(QDMError):
    """A container or sidecar file is malformed.

    Parameters
    ----------
    message : str
        Human readable description.
    offset : int, optional
        Byte offset in the file at which the problem was detected.
    path : str, optional
        File being read.
    """

    exit_code = 3

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericError(QDMError):
    """A numerical stage failed, e.g. too few pixels converged."""

    exit_code = 4
