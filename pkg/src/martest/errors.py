"""Exception hierarchy.

Every error carries a short machine-readable ``code`` used by the CLI when
rendering failures as JSON.
"""


class MarTestError(Exception):
    code = "error"


class DomainError(MarTestError, ValueError):
    code = "domain"


class ShapeError(MarTestError, ValueError):
    code = "shape"


class NumericError(MarTestError, ArithmeticError):
    code = "numeric"


class OverflowNumericError(NumericError):
    code = "overflow"


class DegenerateDataError(MarTestError, ValueError):
    code = "degenerate-data"


class IdentifiabilityError(MarTestError):
    code = "identifiability"


class ConvergenceError(MarTestError):
    code = "convergence"

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DegenerateCovarianceError(MarTestError):
    code = "degenerate-covariance"


class CalibrationError(MarTestError):
    code = "calibration"


class HarnessError(MarTestError):
    code = "harness"


class ParseError(MarTestError, ValueError):
    code = "parse"


class SchemaError(MarTestError, ValueError):
    code = "schema"
