"""Exception hierarchy shared by every stage."""


class OsrLieError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInput(OsrLieError):
    pass


class SchemaError(OsrLieError):
    pass


class ParseError(OsrLieError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class FormatError(OsrLieError):
    pass


class UnsupportedFormat(FormatError):
    pass


class RankDeficient(OsrLieError):
    pass


class TooFewPoints(OsrLieError):
    pass


class DegenerateGroundSet(OsrLieError):
    pass


class DomainError(OsrLieError, ValueError):
    pass


class DegenerateFeatures(OsrLieError):
    pass


class InputMismatch(OsrLieError):
    pass


class ConfigError(OsrLieError):
    pass
