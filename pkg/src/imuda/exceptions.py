"""Exception hierarchy.

Each family maps onto one CLI exit code: configuration problems exit with 2,
bad data or file formats with 3 and numerical failures with 4.
"""


class ImudaError(Exception):
    exit_code = 1


class ConfigError(ImudaError, ValueError):
    exit_code = 2


class InputError(ImudaError, ValueError):
    """Array shapes, label ranges or missing inputs do not fit the call."""

    exit_code = 3


class AlignmentBatchError(InputError):
    """Two point sets compared by a sliced Wasserstein term differ in size."""


class FormatError(InputError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EstimationError(InputError):
    pass


class OracleSizeError(InputError):
    pass


class DegenerateInputError(InputError):
    pass


class NumericalError(ImudaError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, term=None):
        if term is not None:
            message = f"{message} (term: {term})"
        super().__init__(message)
        self.term = term


class GenerationError(NumericalError):
    """Rejection sampling accepted nothing within its attempt budget."""

    def __init__(self, message, max_confidence):
        super().__init__(message)
        self.max_confidence = max_confidence
