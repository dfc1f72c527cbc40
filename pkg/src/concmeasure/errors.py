"""Exception types shared across the package."""


class ConcentrationError(Exception):
    """Base class for all errors raised by concmeasure."""


class FormatError(ConcentrationError):
    """A binary or text input file does not match its expected layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParseError(ConcentrationError):
    """A delimited text file could not be parsed."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ParameterError(ConcentrationError, ValueError):
    """An argument is outside its allowed domain."""


class InsufficientPointsError(ConcentrationError):
    """Not enough uncovered points remain to place another ball."""
