"""
Run-config document: one JSON file with model, domain, problem, sim,
oracle, stopping and output sections, plus dotted `--set` overrides.
"""
import copy
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .domain import DomainSpec
from .errors import ConfigError
from .fields import scalar_field_from_config
from .fk_estimate import ProblemSpec, default_horizon
from .model import DiffusionModel, custom_model, preset
from .pde_oracle import OracleConfig
from .simulate import SimConfig


class ModelSection(BaseModel):
    """Either a preset with parameters or a custom coefficient catalog."""

    model_config = ConfigDict(extra="forbid")

    preset: Optional[str] = None
    params: Dict[str, float] = Field(default_factory=dict)
    custom: Optional[Dict[str, Any]] = None

    @model_validator(mode="after")
    def one_source(self) -> "ModelSection":
        if (self.preset is None) == (self.custom is None):
            raise ValueError("give exactly one of 'preset' and 'custom'")
        return self

    def build(self) -> DiffusionModel:
        if self.custom is not None:
            return custom_model(self.custom)
        return preset(self.preset, self.params)


def _bound(value: Optional[float], default: float) -> float:
    return default if value is None else float(value)


class DomainSection(BaseModel):
    """Box bounds; null entries are infinite. Omitted bounds give the half-space."""

    model_config = ConfigDict(extra="forbid")

    lower: Optional[List[Optional[float]]] = None
    upper: Optional[List[Optional[float]]] = None

    def build(self, d: int) -> DomainSpec:
        if self.lower is None and self.upper is None:
            return DomainSpec.half_space(d)
        lower = self.lower if self.lower is not None else [None] * (d - 1) + [0.0]
        upper = self.upper if self.upper is not None else [None] * d
        if len(lower) != d or len(upper) != d:
            raise ConfigError("domain bounds must match the model dimension", field="domain", d=d)
        return DomainSpec.box([_bound(v, -math.inf) for v in lower], [_bound(v, math.inf) for v in upper])


class ProblemSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    variant: str = "tau"
    f: Optional[Any] = None
    g: Optional[Any] = None
    psi: Optional[Any] = None
    T: Optional[float] = None
    h_existence: bool = False

    def build(self, model: DiffusionModel) -> ProblemSpec:
        boundary_tag = "parabolic_boundary" if self.kind.startswith("parabolic") else "boundary"
        kwargs: Dict[str, Any] = {}
        if self.f is not None:
            kwargs["f"] = scalar_field_from_config(self.f, model, "interior")
        return ProblemSpec(
            kind=self.kind,
            variant=self.variant,
            g=scalar_field_from_config(self.g, model, boundary_tag) if self.g is not None else None,
            psi=scalar_field_from_config(self.psi, model, "interior") if self.psi is not None else None,
            T=self.T,
            h_existence=self.h_existence,
            **kwargs,
        )


class StoppingSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: str = Field("lsmc", pattern="^(lsmc|pde)$")
    degree: Optional[int] = Field(None, ge=0)
    n_exercise: int = Field(50, ge=1)
    refine_check: bool = False
    region_tol: Optional[float] = Field(None, gt=0)
    evaluate_policy: bool = True


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: Optional[str] = None
    csv: bool = True
    dump_paths: int = Field(0, ge=0)


class CompareSection(BaseModel):
    """Frozen tolerance of the MC-versus-oracle table: |MC - PDE| <= k * stderr + C (h + dt)."""

    model_config = ConfigDict(extra="forbid")

    k_stderr: float = Field(3.0, ge=0)
    C: float = Field(1.0, ge=0)
    tolerance: Optional[float] = Field(None, ge=0)


class RunConfig(BaseModel):
    """Parsed run-config document."""

    model_config = ConfigDict(extra="forbid")

    model: ModelSection
    domain: DomainSection = Field(default_factory=DomainSection)
    problem: Optional[ProblemSection] = None
    sim: Dict[str, Any] = Field(default_factory=dict)
    oracle: Dict[str, Any] = Field(default_factory=dict)
    stopping: StoppingSection = Field(default_factory=StoppingSection)
    output: OutputSection = Field(default_factory=OutputSection)
    points: Optional[List[List[float]]] = None
    times: Optional[List[float]] = None
    t: Optional[float] = None
    probe_b: Optional[float] = Field(None, gt=0)
    compare: CompareSection = Field(default_factory=CompareSection)

    def build_model(self) -> DiffusionModel:
        return self.model.build()

    def build_domain(self, model: DiffusionModel) -> DomainSpec:
        return self.domain.build(model.d)

    def build_problem(self, model: DiffusionModel) -> ProblemSpec:
        if self.problem is None:
            raise ConfigError("this subcommand needs a problem section", field="problem")
        return self.problem.build(model)

    def query_points(self, model: DiffusionModel) -> List[List[float]]:
        if not self.points:
            raise ConfigError("no query points given", field="points")
        for k, point in enumerate(self.points):
            if len(point) != model.d:
                raise ConfigError("query point has the wrong dimension", field=f"points.{k}", d=model.d)
        return self.points

    def build_sim(self, model: DiffusionModel, domain: DomainSpec, x: Sequence[float],
                  threads: Optional[int] = None) -> SimConfig:
        """SimConfig of the sim section; a missing t_max becomes the default horizon at x."""
        values = dict(self.sim)
        if "t_max" not in values:
            if self.problem is not None and self.problem.kind.startswith("parabolic") and self.problem.T:
                values["t_max"] = float(self.problem.T)
            else:
                values["t_max"] = default_horizon(model, domain, x)
        if threads is not None:
            values["threads"] = threads
        return _section(SimConfig, values, "sim")

    def build_oracle(self) -> OracleConfig:
        return _section(OracleConfig, dict(self.oracle), "oracle")

    def to_document(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)


def _section(cls: Any, values: Dict[str, Any], name: str) -> Any:
    try:
        return cls(**values)
    except ValidationError as exc:
        raise _config_error(exc, prefix=name) from exc


def _config_error(exc: ValidationError, prefix: str = "") -> ConfigError:
    first = exc.errors()[0]
    loc = ".".join(str(part) for part in first.get("loc", ()))
    path = ".".join(part for part in (prefix, loc) if part)
    return ConfigError(f"invalid run config at '{path or '<root>'}': {first.get('msg', 'invalid value')}",
                       field=path, errors=len(exc.errors()))


def parse_value(text: str) -> Any:
    """JSON literal when it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply dotted `path=value` overrides to a raw run-config document.

    Args:
        document: Parsed JSON document
        overrides: Entries like "sim.dt=0.001" or "model.params.kappa=2"

    Returns:
        A new document with the overrides applied
    """
    out = copy.deepcopy(document)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form path=value", field=item)
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"override '{item}' has an empty path", field=item)
        node: Any = out
        for key in keys[:-1]:
            if isinstance(node, list):
                node = node[_index(key, item)]
                continue
            nxt = node.get(key)
            if nxt is None:
                nxt = node[key] = {}
            node = nxt
        if isinstance(node, list):
            node[_index(keys[-1], item)] = parse_value(raw)
        else:
            node[keys[-1]] = parse_value(raw)
    return out


def _index(key: str, item: str) -> int:
    try:
        return int(key)
    except ValueError as exc:
        raise ConfigError(f"override '{item}' indexes a list with '{key}'", field=item) from exc


def parse_document(document: Dict[str, Any]) -> RunConfig:
    if not isinstance(document, dict):
        raise ConfigError("run config must be a JSON object", field="<root>")
    try:
        return RunConfig.model_validate(document)
    except ValidationError as exc:
        raise _config_error(exc) from exc


def load_run_config(path: str, overrides: Sequence[str] = ()) -> RunConfig:
    """
    Read, override and validate a run-config file.

    Raises:
        ConfigError: unreadable file, JSON syntax error (with line and column)
            or a section that fails validation (with its dotted field path)
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read run config '{path}'", field="config", reason=str(exc)) from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run config is not valid JSON: {exc.msg}", field="config",
                          line=exc.lineno, column=exc.colno) from exc
    return parse_document(apply_overrides(document, overrides))
