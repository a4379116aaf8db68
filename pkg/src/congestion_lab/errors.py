"""Exception hierarchy shared by the pipeline stages.

The CLI maps each family onto a process exit code.
"""


class CongestionLabError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class UsageError(CongestionLabError):
    """Missing input files or invalid command-line usage."""

    exit_code = 2


class NetworkError(CongestionLabError, ValueError):
    """Malformed segment registry or annotation mask."""

    exit_code = 3


class ExtractionError(CongestionLabError, ValueError):
    """A captured frame could not be reduced to segment histograms."""

    exit_code = 3


class DataInconsistencyError(CongestionLabError, ValueError):
    """Inputs disagree with each other (dates, columns, dimensions)."""

    exit_code = 3


class SchemaError(CongestionLabError, ValueError):
    """A CSV or model file does not follow the expected layout."""

    exit_code = 4


class NumericalError(CongestionLabError, ArithmeticError):
    """A model could not be fitted."""

    exit_code = 5


class ConvergenceError(NumericalError):
    """The SVR solver hit its iteration cap before meeting the KKT tolerance."""

    def __init__(self, message, violation):
        super().__init__(message)
        self.violation = violation


class FitTimeout(NumericalError):
    """A single fit exceeded its wall-clock budget."""
