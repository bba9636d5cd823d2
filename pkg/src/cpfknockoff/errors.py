"""Exception hierarchy.

Validation problems (bad input, bad configuration) derive from
:class:`ValidationError`; failures that happen while computing derive from
:class:`NumericalError`.  The CLI maps the two families to different exit
codes.
"""


class KnockoffError(Exception):
    """Base class for all package errors."""


class ValidationError(KnockoffError, ValueError):
    pass


class NumericalError(KnockoffError, RuntimeError):
    pass


class SchemaMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, row, column, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"cannot parse value {value!r} at row {row}, column {column!r}")


class NonBinaryValue(ValidationError):
    def __init__(self, column, row=None, value=None):
        self.column = column
        self.row = row
        self.value = value
        where = f" (row {row}, value {value!r})" if row is not None else ""
        super().__init__(f"column {column!r} is declared binary but holds a non-0/1 value{where}")


class InvalidOutcome(ValidationError):
    pass


class ConstantColumn(ValidationError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} has zero variance and cannot be standardized")


class DegenerateSplit(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ModelDimensionMismatch(DimensionMismatch):
    pass


class OddLength(ValidationError):
    pass


class InvalidQ(ValidationError):
    pass


class PathMissing(ValidationError):
    pass


class FamilyMismatch(ValidationError):
    pass


class OutcomeMismatch(ValidationError):
    pass


class MissingTimeGrid(ValidationError):
    pass


class EmptyTruth(ValidationError):
    pass


class EmptyResults(ValidationError):
    pass


class NoEvents(ValidationError):
    pass


class SingleCauseData(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


class NonFinitePrediction(NumericalError):
    def __init__(self, feature, row):
        self.feature = feature
        self.row = row
        super().__init__(f"model returned a non-finite prediction while probing feature {feature} (row {row})")


class ReplicationError(NumericalError):
    def __init__(self, rep, cause):
        self.rep = rep
        self.cause = cause
        super().__init__(f"replication {rep} failed: {cause}")
