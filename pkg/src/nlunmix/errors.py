"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage errors -> 1, I/O and file format
errors -> 2, numerical failures -> 3.
"""


class NlunmixError(Exception):
    """Base class for every error raised by the package."""


class UsageError(NlunmixError, ValueError):
    """Invalid argument or configuration value."""


class ValidationError(NlunmixError, ValueError):
    """Data violates a documented invariant (NaN, negative reflectance, ...)."""


class FormatError(NlunmixError, ValueError):
    """A file could not be parsed."""


class MissingKeyError(FormatError):
    """A required header key is absent."""


class UnsupportedFormatError(FormatError):
    """A header names a data type, byte order or interleave we do not read."""


class SizeMismatchError(FormatError):
    """Raw payload size disagrees with the header."""


class NumericalError(NlunmixError, ArithmeticError):
    """A numerical routine failed (factorization, convergence, ...)."""


class DegenerateInputError(NumericalError):
    """Input is degenerate for the requested computation."""


class InfeasibilityError(NumericalError):
    """No solution satisfies the constraints."""


class UnboundedError(NumericalError):
    """The objective is unbounded over the feasible set."""


class FittingError(NumericalError):
    """Hyperparameter or distribution fitting failed."""


class ExtractionError(NumericalError):
    """Endmember extraction failed."""


class EarlyStopError(ExtractionError):
    """Iterative extraction ran out of pixels; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
