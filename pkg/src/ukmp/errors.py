"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class UkmpError(Exception):
    """Base class for all library errors."""


class ValidationError(UkmpError, ValueError):
    """Bad input: wrong shapes, non-positive hyperparameters, malformed files."""


class ParseError(ValidationError):
    """A demonstration or query file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(UkmpError, ArithmeticError):
    """A numerical routine failed on otherwise valid input."""


class FactorizationError(NumericalError):
    """A matrix expected to be positive-definite could not be factorized."""


class NotDetectableError(NumericalError):
    """The LQR state weight leaves an unstable or marginal mode unobserved."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration limit."""


class NoConfidenceError(NumericalError):
    """The summed fusion precision is singular: no controller is trusted."""
