"""Exception hierarchy.  Each class carries the CLI exit status it maps to."""


class VdriskError(Exception):
    exit_code = 1


class InvalidInputError(VdriskError, ValueError):
    exit_code = 3


class CohortParseError(InvalidInputError):
    """A cohort CSV cell could not be parsed."""

    def __init__(self, row: int, column: str, message: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


class ValidationError(InvalidInputError):
    pass


class IncompleteInputError(InvalidInputError):
    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"missing value for {variable!r}")


class DegenerateCovariateError(InvalidInputError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"covariate {column!r} is constant and cannot be normalized")


class UndefinedMetricError(InvalidInputError):
    """Concordance or ROC requested where it has no definition."""


class NumericalError(VdriskError, ArithmeticError):
    exit_code = 4


class SaturationError(NumericalError):
    pass


class CoxOverflowError(NumericalError):
    pass


class RankDeficiencyError(NumericalError):
    pass


class ScorerError(VdriskError):
    exit_code = 5

    def __init__(self, message: str, request_id: int | None = None):
        self.request_id = request_id
        if request_id is not None:
            message = f"request {request_id}: {message}"
        super().__init__(message)
