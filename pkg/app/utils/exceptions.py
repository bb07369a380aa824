from typing import Optional


class SeqDiffError(Exception):
    """Base class for every error raised by the engine."""

    exit_code: int = 2

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(SeqDiffError, ValueError):
    """Invalid parameters, grids or command usage."""

    exit_code = 1


class ShapeMismatchError(SeqDiffError, ValueError):
    exit_code = 2


class MissingContextError(SeqDiffError):
    """An initialization strategy lacks the history or observation it needs."""

    exit_code = 2


class CheckpointError(SeqDiffError):
    exit_code = 2


class FormatError(SeqDiffError, ValueError):
    """Malformed file contents. Binary formats report a byte offset, text formats a line."""

    exit_code = 2

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        location = ""
        if offset is not None:
            location = f" (byte offset {offset})"
        elif line is not None:
            location = f" (line {line})"
        super().__init__(f"{message}{location}")
        self.offset = offset
        self.line = line


class NumericalDivergenceError(SeqDiffError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, step_index: Optional[int] = None):
        if step_index is not None:
            message = f"{message} at step {step_index}"
        super().__init__(message)
        self.step_index = step_index
