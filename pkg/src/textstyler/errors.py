"""Exception hierarchy shared across the package."""


class TextStylerError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(TextStylerError, ValueError):
    pass


class InvalidConfigError(TextStylerError, ValueError):
    pass


class BackendUnavailableError(TextStylerError):
    pass


class DegenerateDirectionError(TextStylerError, ValueError):
    """The style and source prompts embed to the same point."""


class NumericError(TextStylerError, ArithmeticError):
    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class DivergedError(NumericError):
    def __init__(self, message, step=None, term=None):
        super().__init__(message, term=term)
        self.step = step


class InsufficientDataError(TextStylerError, ValueError):
    pass


class SingularCovarianceError(TextStylerError, ArithmeticError):
    pass


class CheckpointError(TextStylerError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class FormatError(TextStylerError, ValueError):
    pass


class ParseError(TextStylerError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
