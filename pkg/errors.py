class LSDError(Exception):
    """Base class for every error raised by the LSD toolkit"""


class BadParameter(LSDError, ValueError):
    """A tuning, model or run parameter is outside its admissible range"""


class DegenerateTuning(LSDError):
    """The (beta, gamma) pair makes the divergence undefined for the given data"""


class SupportMismatch(LSDError):
    """Two densities, or a density and a frequency table, disagree on support"""


class NoConvergence(LSDError):
    """The optimizer could not locate a finite minimum"""


class NumericalFailure(LSDError):
    """A finite-difference or sampling step lost all precision"""


class SingularMatrix(LSDError):
    """A matrix that must be inverted is singular or badly conditioned"""


class ParseError(LSDError, ValueError):
    """Malformed count data"""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyData(LSDError, ValueError):
    """Count data with no observations"""


class UnknownDataset(LSDError, KeyError):
    """Requested built-in dataset does not exist"""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown dataset"


# Exit code 1 in the CLI; everything else derived from LSDError maps to 2
CONFIG_ERRORS = (BadParameter, ParseError, EmptyData, UnknownDataset)
