"""Exception hierarchy.

Every error carries a machine-readable ``code`` and the CLI exit status it maps
to: 2 for invalid input, 3 when the method itself cannot produce a model.
"""

from __future__ import annotations

from typing import Any


class MetaCalError(Exception):
    code = "METACAL_ERROR"
    exit_code = 3

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "context": self.context}


class ValidationError(MetaCalError, ValueError):
    code = "VALIDATION_ERROR"
    exit_code = 2


class NotOnSimplex(ValidationError):
    code = "NOT_ON_SIMPLEX"


class DegenerateK(ValidationError):
    code = "DEGENERATE_K"


class NonFiniteInput(ValidationError):
    code = "NON_FINITE_INPUT"


class NonPositiveProbability(ValidationError):
    code = "NON_POSITIVE_PROBABILITY"


class ClassCountMismatch(ValidationError):
    code = "CLASS_COUNT_MISMATCH"


class LabelOutOfRange(ValidationError):
    code = "LABEL_OUT_OF_RANGE"


class SchemaError(ValidationError):
    code = "SCHEMA_ERROR"


class FitError(MetaCalError):
    code = "FIT_ERROR"
    exit_code = 3


class TooFewValues(FitError):
    code = "TOO_FEW_VALUES"


class ToleranceTooSmall(FitError):
    code = "TOLERANCE_TOO_SMALL"


class EmptyNegatives(FitError):
    code = "EMPTY_NEGATIVES"


class NoCorrectPredictions(FitError):
    code = "NO_CORRECT_PREDICTIONS"


class EmptyAcceptedTrainingSet(FitError):
    code = "EMPTY_ACCEPTED_TRAINING_SET"


class UnreachableAccuracy(FitError):
    code = "UNREACHABLE_ACCURACY"


class AllRunsFailed(FitError):
    code = "ALL_RUNS_FAILED"
