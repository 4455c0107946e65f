"""Exception types raised by the library."""


class NtklabError(Exception):
    """Base class for library failures."""


class ConvergenceError(NtklabError):
    """An iterative routine ran out of iterations before meeting tolerance."""


class ShapeError(NtklabError):
    """Operands have incompatible or invalid dimensions."""


class SymmetryError(NtklabError):
    """A matrix required to be symmetric is not, beyond tolerance."""


class NumericalError(NtklabError):
    """Non-finite values or numerically invalid state encountered."""


class ConfigError(NtklabError):
    """Invalid configuration or CLI input."""


class ParseError(NtklabError):
    """Malformed input file."""


class InstabilityError(NtklabError):
    """Training diverged past the loss blow-up threshold."""

    def __init__(self, message, epoch=None, partial_trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.partial_trace = partial_trace


class InsufficientDataError(NtklabError):
    """Not enough records for the requested analysis."""
