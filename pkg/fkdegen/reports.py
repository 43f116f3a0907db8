"""
Report models emitted on stdout by the CLI.
"""
import json
import math
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from .model import DiffusionModel


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"


def clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return clean(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


class ModelInfo(BaseModel):
    name: str
    d: int
    m: int
    beta: float
    coordinates: List[str] = Field(default_factory=list)
    params: Dict[str, Any] = Field(default_factory=dict)
    extension_beyond_scope: bool = False

    @classmethod
    def of(cls, model: DiffusionModel) -> "ModelInfo":
        return cls(
            name=model.name,
            d=model.d,
            m=model.m,
            beta=model.beta,
            coordinates=list(model.coordinates),
            params=clean(dict(model.params or {})),
            extension_beyond_scope=model.extension_beyond_scope,
        )


class Report(BaseModel):
    """Fields shared by every successful report."""

    status: str = "ok"
    subcommand: str
    generated_at: str = Field(default_factory=utc_now)
    model: ModelInfo
    artifacts: Dict[str, str] = Field(default_factory=dict)

    def to_json(self) -> str:
        return dump_json(self.model_dump(mode="python"))


class ClassifyReport(Report):
    subcommand: str = "classify"
    S: Optional[Dict[str, Any]] = None
    M: Optional[Dict[str, Any]] = None
    Sigma: Optional[Dict[str, Any]] = None
    N: Optional[Dict[str, Any]] = None
    label: str
    scenario: str
    analytic_case: str
    analytic_scenario: Optional[str] = None
    probe_b: float
    validation: Dict[str, Any] = Field(default_factory=dict)


class PriceReport(Report):
    subcommand: str = "price"
    kind: str
    variant: str
    t: Optional[float] = None
    x: List[float]
    mean: float
    stderr: float
    ci95: List[float]
    truncation_bias_bound: Optional[float] = None
    n_paths: int
    dt: float
    t_max: float
    diagnostics: Dict[str, Any]
    sweep: Optional[List[Dict[str, Any]]] = None


class ExerciseReport(Report):
    subcommand: str = "exercise"
    kind: str
    method: str
    t: Optional[float] = None
    x: List[float]
    value_low: float
    value_high: Optional[float] = None
    stderr: float
    ci95: List[float]
    n_paths: int
    truncation_bias_bound: Optional[float] = None
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    policy: Dict[str, Any]
    boundary: List[List[float]] = Field(default_factory=list)
    pde_value: Optional[float] = None


class OracleReport(Report):
    subcommand: str = "oracle"
    kind: str
    solution: Dict[str, Any]
    values: List[Dict[str, Any]] = Field(default_factory=list)


class CompareReport(Report):
    subcommand: str = "compare"
    kind: str
    h: float
    dt: float
    rows: List[Dict[str, Any]]
    max_abs_diff: float
    passed: bool
    solution: Dict[str, Any]


class ErrorReport(BaseModel):
    status: str = "error"
    subcommand: str
    generated_at: str = Field(default_factory=utc_now)
    category: str
    message: str
    detail: Dict[str, Any] = Field(default_factory=dict)

    def to_json(self) -> str:
        return dump_json(self.model_dump(mode="python"))


def dump_json(payload: Dict[str, Any]) -> str:
    """Sorted-key JSON with non-finite values mapped to null."""
    return json.dumps(clean(payload), sort_keys=True, indent=2, allow_nan=False, default=str)


def strip_timestamp(text: str) -> Dict[str, Any]:
    """Parsed report without generated_at, for determinism checks."""
    payload = json.loads(text)
    payload.pop("generated_at", None)
    return payload
