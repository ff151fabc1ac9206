"""Exception hierarchy. CLI exit codes: 2 config, 3 data, 4 numerical."""
from __future__ import annotations


class ReenetError(Exception):
    """Base for all package errors."""


class ConfigError(ReenetError):
    """Invalid or incomplete run configuration."""

    exit_code = 2


class DataError(ReenetError):
    """Malformed, missing, or contract-violating input data."""

    exit_code = 3


class NumericalError(ReenetError):
    """Numerical failure: singular solves, rank deficiency, degenerate stats."""

    exit_code = 4


class IngestError(DataError):
    pass


class MissingInputError(DataError):
    """A staged artifact required by this stage is absent."""

    def __init__(self, artifact: str):
        super().__init__(f"missing input: {artifact}")
        self.artifact = artifact


class ProductAbsentError(DataError):
    """Product has no flows anywhere in the panel."""


class DegenerateCorrelationError(NumericalError):
    """Undefined correlation: too few observations or zero variance."""


class DegenerateNullError(NumericalError):
    """Permutation null distribution could not be formed or has zero spread."""


class PoolTooSmallError(DataError):
    """Permutation output pool below the configured minimum."""


class SingularRiskMatrixError(NumericalError):
    """(I - W) solve failed beyond tolerance; carries a condition-number report."""

    def __init__(self, message: str, condition_number: float):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


class RankDeficientError(NumericalError):
    """PCA input has a constant indicator column."""


class CollinearityError(NumericalError):
    """Design matrix is rank deficient; names the first dependent column."""

    def __init__(self, column: str):
        super().__init__(f"collinear design column: {column}")
        self.column = column
