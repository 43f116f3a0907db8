"""
Exception hierarchy.

Every error carries a machine-readable category and the process exit code
the CLI maps it to: 2 for validation failures, 3 for numerical failures.
"""
from typing import Any, Dict, Optional


class FkDegenError(Exception):
    """Base class for all library errors."""

    category: str = "internal"
    exit_code: int = 1

    def __init__(self, message: str, category: Optional[str] = None, **detail: Any):
        super().__init__(message)
        self.message = message
        if category is not None:
            self.category = category
        self.detail: Dict[str, Any] = detail

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": "error",
            "category": self.category,
            "message": self.message,
            "detail": self.detail,
        }


class ValidationError(FkDegenError):
    category = "validation"
    exit_code = 2


class NumericalError(FkDegenError):
    category = "numerical"
    exit_code = 3


# validation family

class ConfigError(ValidationError):
    category = "config"


class UnknownPreset(ValidationError):
    category = "model/unknown-preset"


class ParamOutOfRange(ValidationError):
    category = "model/param-out-of-range"


class AssumptionViolation(ValidationError):
    """A standing model assumption failed on the validation grid."""

    category = "model/assumption"

    def __init__(self, assumption: str, where: Any = None, message: Optional[str] = None, **detail: Any):
        text = message or f"assumption '{assumption}' violated"
        super().__init__(text, category=f"model/{assumption}", assumption=assumption, where=where, **detail)
        self.assumption = assumption
        self.where = where


class EvaluationFailure(ValidationError):
    category = "model/evaluation"


class CompatibilityError(ValidationError):
    category = "compatibility"


class BoundaryPoint(ValidationError):
    category = "domain/boundary-point"


class OutOfRange(ValidationError):
    category = "domain/out-of-range"


class MissingHolderData(ValidationError):
    category = "boundary/missing-holder-data"


class BoundaryDataMissing(ValidationError):
    category = "compatibility/boundary-data"


# numerical family

class QuadratureFailure(NumericalError):
    category = "boundary/quadrature"


class Inconclusive(NumericalError):
    category = "boundary/inconclusive"


class InconsistentClassification(NumericalError):
    category = "boundary/inconsistent"


class ConditionLikelyViolated(NumericalError):
    category = "model/supermartingale-condition"


class RegressionIllConditioned(NumericalError):
    category = "stopping/regression"


class GridTooCoarse(NumericalError):
    category = "stopping/grid-too-coarse"


class NonMonotoneStencil(NumericalError):
    category = "oracle/non-monotone"


class SolverDiverged(NumericalError):
    category = "oracle/solver-diverged"


class MaxIterations(NumericalError):
    category = "oracle/max-iterations"
