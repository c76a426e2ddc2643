"""Exception types raised across the package."""


class DiseeError(Exception):
    """Base class for all package errors."""


class NetworkError(DiseeError, ValueError):
    pass


class ParseError(NetworkError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateEvent(NetworkError):
    pass


class CausalityViolation(NetworkError):
    pass


class InsufficientRemovableEdges(NetworkError):
    pass


class NotEnoughNegatives(NetworkError):
    pass


class InvalidParams(DiseeError, ValueError):
    pass


class EmptySample(DiseeError, ValueError):
    pass


class NumericalError(DiseeError, ArithmeticError):
    """Non-finite value in a likelihood or gradient evaluation.

    ``params`` holds the last finite parameters when raised from training.
    """

    def __init__(self, message, dyad=None, params=None):
        super().__init__(message)
        self.dyad = dyad
        self.params = params


class UndefinedMetric(DiseeError, ValueError):
    pass


class InsufficientTruth(DiseeError, ValueError):
    pass


class IngestError(DiseeError, RuntimeError):
    pass


class EmptyNetwork(DiseeError, ValueError):
    pass
