"""Exception hierarchy.

``ValidationError`` subclasses signal bad input (CLI exit code 2); everything
else deriving from ``ForgebenchError`` is a runtime failure (exit code 3).
"""


class ForgebenchError(Exception):
    pass


class ValidationError(ForgebenchError, ValueError):
    pass


class MalformedHeader(ValidationError):
    pass


class TruncatedPayload(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class ProfileMismatch(ValidationError):
    pass


class UnknownWord(ValidationError):
    pass


class MissingCoordinate(ValidationError):
    pass


class NonNumeric(ValidationError):
    pass


class OutOfWorkArea(ValidationError):
    pass


class EmptySplit(ValidationError):
    pass


class OverlapError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class Diverged(ForgebenchError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class StageError(ForgebenchError):
    """Wraps an error raised inside a pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
