"""Exception types shared across the package."""


class MarlLensError(Exception):
    """Base class for every error raised by marl_lens."""


class MalformedName(MarlLensError, ValueError):
    pass


class UnknownEnvPrefix(MarlLensError, ValueError):
    pass


class UnsupportedSizeClass(MarlLensError, ValueError):
    pass


class GridTooSmall(MarlLensError, ValueError):
    pass


class InvalidAction(MarlLensError, ValueError):
    pass


class SteppedAfterDone(MarlLensError, RuntimeError):
    pass


class ShapeMismatch(MarlLensError, ValueError):
    pass


class NonFiniteGradient(MarlLensError, FloatingPointError):
    pass


class BufferUnderflow(MarlLensError, RuntimeError):
    pass


class StaleRollout(MarlLensError, RuntimeError):
    pass


class EmptyLog(MarlLensError, ValueError):
    pass


class ConfigInvalid(MarlLensError, ValueError):
    pass


class ParseError(MarlLensError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
