"""Exception hierarchy shared by every module."""


class FedCorrError(Exception):
    """Base class for all errors raised by fedcorr."""


class InvalidInput(FedCorrError, ValueError):
    pass


class ShapeMismatch(FedCorrError, ValueError):
    pass


class InsufficientSamples(FedCorrError, ValueError):
    pass


class ProtocolViolation(FedCorrError, RuntimeError):
    """A compression round was attempted without the state it requires."""


class ParseError(FedCorrError, ValueError):
    """Malformed dataset input. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
