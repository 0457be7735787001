"""Exception hierarchy shared by every module of the package."""


class SigArchiveError(Exception):
    """Base class for all package errors."""


class DegenerateInput(SigArchiveError, ValueError):
    pass


class InvalidRank(SigArchiveError, ValueError):
    pass


class InvalidParameter(SigArchiveError, ValueError):
    pass


class DimensionMismatch(SigArchiveError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class BuildFailed(SigArchiveError, RuntimeError):
    pass


class FormatError(SigArchiveError, ValueError):
    pass


class ParseError(SigArchiveError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(SigArchiveError, ValueError):
    def __init__(self, message, field=None):
        if field and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class AlignmentError(SigArchiveError, ValueError):
    pass


class SeparationUnreachable(SigArchiveError, RuntimeError):
    pass
