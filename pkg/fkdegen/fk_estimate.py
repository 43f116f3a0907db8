"""
Monte Carlo estimators for the Feynman-Kac representations.

Elliptic and parabolic boundary-value problems are averaged over simulated
paths stopped at tau (first exit counting the degenerate face) or lambda
(first exit through Gamma1 only). The same machinery evaluates the stopped
functional J for a given stopping rule.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boundary import classify_analytic, classify_origin, expected_exit_time, scenario_of_case
from .domain import FACE_GAMMA0, FACE_GAMMA1, FACE_HORIZON, DomainSpec
from .errors import (
    BoundaryDataMissing,
    CompatibilityError,
    ConditionLikelyViolated,
    ConfigError,
    FkDegenError,
    Inconclusive,
    OutOfRange,
)
from .fields import Constant, ScalarField, as_points
from .logging_utils import get_logger
from .model import DiffusionModel, compute_M, generator_values, growth_constant
from .simulate import FACE_STOP, PathEngine, PathSample, SimConfig, StopRule, run_paths


PROBLEM_KINDS = ("elliptic_bvp", "parabolic_bvp", "elliptic_obstacle", "parabolic_obstacle")
VARIANTS = ("tau", "lambda")
Z95 = 1.96
COMPAT_RTOL = 1e-12
TERMINAL_RTOL = 1e-5


def _zero_field() -> ScalarField:
    return ScalarField(Constant(0.0), 1.0, "interior")


@dataclass(frozen=True)
class ProblemSpec:
    """
    Problem data for one representation formula.

    boundary_mode is derived by resolve(): "partial" uses g on Gamma1 only,
    "full" uses g on the degenerate face too.
    """

    kind: str
    variant: str = "tau"
    f: ScalarField = field(default_factory=_zero_field)
    g: Optional[ScalarField] = None
    psi: Optional[ScalarField] = None
    T: Optional[float] = None
    h_existence: bool = False
    boundary_mode: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem kind '{self.kind}'", field="problem.kind", known=list(PROBLEM_KINDS))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'", field="problem.variant")
        if self.g is None:
            raise CompatibilityError("boundary data g is required", category="compatibility/missing-field",
                                     field="problem.g")
        if self.is_obstacle and self.psi is None:
            raise CompatibilityError(f"{self.kind} needs an obstacle psi", category="compatibility/missing-field",
                                     field="problem.psi")
        if self.is_parabolic and not (self.T is not None and self.T > 0.0):
            raise ConfigError("parabolic problems need a horizon T > 0", field="problem.T")
        if self.boundary_mode not in (None, "partial", "full"):
            raise ConfigError(f"unknown boundary mode '{self.boundary_mode}'", field="problem.boundary_mode")

    @property
    def is_parabolic(self) -> bool:
        return self.kind.startswith("parabolic")

    @property
    def is_obstacle(self) -> bool:
        return self.kind.endswith("obstacle")

    def resolve(self, model: DiffusionModel, domain: DomainSpec, scenario: str) -> "ProblemSpec":
        """
        Fix the boundary mode from the scenario and check the problem data.

        Args:
            model: Diffusion model
            domain: Box domain
            scenario: "A" (origin unattainable) or "B" (attainable)

        Returns:
            A copy with boundary_mode set
        """
        if self.variant == "lambda" or scenario == "A":
            mode = "partial"
        else:
            mode = "full"
            if not self.g.covers_gamma0:
                raise CompatibilityError("tau-exits in scenario B need g on the degenerate face",
                                         category="compatibility/boundary-data", domain=self.g.domain)
        resolved = replace(self, boundary_mode=mode)
        resolved.check_data(model, domain)
        return resolved

    def _times(self) -> Sequence[float]:
        if not self.is_parabolic:
            return (0.0,)
        return tuple(np.linspace(0.0, float(self.T), 5))

    def check_data(self, model: DiffusionModel, domain: DomainSpec, radius: float = 4.0) -> None:
        full = self.boundary_mode == "full"
        boundary = domain.sample_boundary(12, include_gamma0=full, radius=radius)
        inner = domain.sample_interior(7 if domain.d <= 2 else 3, radius=radius)
        both = np.vstack([inner, boundary])
        for t in self._times():
            self.f.check_growth(both, t, "f")
            if boundary.shape[0]:
                self.g.check_growth(boundary, t, "g")
            if self.psi is not None:
                self.psi.check_growth(both, t, "psi")
                self._check_obstacle(boundary, t)
        if self.is_parabolic:
            if self.psi is not None:
                self._check_obstacle(inner, float(self.T))
            if self.h_existence:
                self._check_terminal(model, domain, radius)

    def _check_obstacle(self, points: np.ndarray, t: float) -> None:
        psi = self.psi(points, t)
        g = self.g(points, t)
        bad = psi > g + COMPAT_RTOL * (1.0 + np.abs(g))
        if np.any(bad):
            k = int(np.argmax(psi - g))
            raise CompatibilityError("obstacle exceeds the boundary data", category="compatibility/obstacle",
                                     where=points[k].tolist(), t=t, psi=float(psi[k]), g=float(g[k]))

    def _check_terminal(self, model: DiffusionModel, domain: DomainSpec, radius: float) -> None:
        T = float(self.T)
        pts = domain.sample_boundary(8, include_gamma0=self.boundary_mode == "full", radius=radius)
        pts = pts[pts[:, -1] > 0.0] if self.boundary_mode != "full" else pts
        if pts.shape[0] == 0:
            return
        g_t = self.g.evaluator.time_derivative(pts, T)
        lhs = -g_t + generator_values(model, self.g.evaluator, pts, T)
        rhs = self.f(pts, T)
        gap = np.abs(lhs - rhs)
        k = int(np.argmax(gap))
        if gap[k] > TERMINAL_RTOL * (1.0 + abs(rhs[k])):
            raise CompatibilityError("terminal compatibility -g_t + A g = f fails on the boundary",
                                     category="compatibility/terminal", where=pts[k].tolist(), gap=float(gap[k]))


@dataclass
class Diagnostics:
    gamma0_touch_rate: float
    horizon_censor_rate: float
    scheme_violations: int
    variant: str
    scenario: Optional[str]
    extension_beyond_scope: bool
    stop_rate: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "gamma0_touch_rate": self.gamma0_touch_rate,
            "horizon_censor_rate": self.horizon_censor_rate,
            "scheme_violations": self.scheme_violations,
            "variant": self.variant,
            "scenario": self.scenario,
            "extension_beyond_scope": self.extension_beyond_scope,
        }
        if self.stop_rate is not None:
            out["stop_rate"] = self.stop_rate
        return out


@dataclass
class Estimate:
    mean: float
    stderr: float
    n_paths: int
    truncation_bias_bound: Optional[float]
    diagnostics: Diagnostics
    dt: float

    @property
    def ci95(self) -> Tuple[float, float]:
        return (self.mean - Z95 * self.stderr, self.mean + Z95 * self.stderr)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci95": list(self.ci95),
            "n_paths": self.n_paths,
            "truncation_bias_bound": self.truncation_bias_bound,
            "dt": self.dt,
            "diagnostics": self.diagnostics.to_dict(),
        }


def mean_stderr(values: np.ndarray, antithetic: bool = False) -> Tuple[float, float]:
    """Sample mean and standard error; antithetic pairs (2i, 2i+1) are averaged first."""
    v = np.asarray(values, dtype=float)
    if antithetic and v.size >= 2:
        v = 0.5 * (v[0 : v.size - v.size % 2 : 2] + v[1::2][: v.size // 2])
    if v.size == 0:
        return float("nan"), float("nan")
    mean = float(np.sum(v) / v.size)
    if v.size < 2:
        return mean, 0.0
    return mean, float(np.std(v, ddof=1) / math.sqrt(v.size))


# ---------------------------------------------------------------------------
# scenario and horizon helpers


def scenario_for(model: DiffusionModel, domain: DomainSpec) -> str:
    """Scenario of the origin, falling back to the analytic case when the integrals are inconclusive."""
    try:
        return classify_origin(model, domain.default_probe_b()).scenario
    except Inconclusive:
        scenario = scenario_of_case(classify_analytic(model))
        if scenario is None:
            raise
        get_logger().warning("classification inconclusive, using the analytic case",
                             extra={"scenario": scenario})
        return scenario


def default_horizon(model: DiffusionModel, domain: DomainSpec, x: Any) -> float:
    """max(10/c0, 5 x expected exit time of the degenerate coordinate from (0, upper))."""
    horizon = 10.0 / model.c0
    top = domain.upper[-1]
    y = float(np.asarray(x, dtype=float)[-1])
    if math.isfinite(top) and 0.0 < y < top:
        try:
            horizon = max(horizon, 5.0 * expected_exit_time(model, 0.0, y, top))
        except FkDegenError:
            try:
                horizon = max(horizon, 5.0 * expected_exit_time(model, min(1e-6, 0.5 * y), y, top))
            except FkDegenError:
                pass
    return horizon


def data_growth(spec: ProblemSpec, model: DiffusionModel) -> float:
    constants = [model.growth_K, spec.f.growth_K, spec.g.growth_K]
    if spec.psi is not None:
        constants.append(spec.psi.growth_K)
    return max(constants)


def truncation_bias(model: DiffusionModel, spec: ProblemSpec, x: Any, t_max: float, t: float = 0.0,
                    M: Optional[float] = None) -> Optional[float]:
    """C (1 + |x|) e^{-c0 (t_max - t)}; None when no supermartingale constant is available."""
    if M is None:
        try:
            M = compute_M(model).M
        except ConditionLikelyViolated as exc:
            get_logger().warning("no certified truncation bound", extra={"detail": exc.message})
            return None
    C = growth_constant(data_growth(spec, model), model.c0, M)
    norm = float(np.linalg.norm(np.asarray(x, dtype=float)))
    return C * (1.0 + norm) * math.exp(-model.c0 * (t_max - t))


# ---------------------------------------------------------------------------
# per-path values


def _check_start(domain: DomainSpec, spec: ProblemSpec, x: np.ndarray) -> None:
    if x.shape != (domain.d,):
        raise ConfigError("start point has the wrong dimension", d=domain.d, got=list(x.shape))
    if not domain.in_closure(x)[0] or x[-1] < 0.0:
        raise OutOfRange("start point is outside the closed domain", x=x.tolist())
    if x[-1] == 0.0 and spec.boundary_mode != "full":
        raise OutOfRange("start on the degenerate face needs full boundary data (tau-variant, scenario B)",
                         x=x.tolist())


def path_values(sample: PathSample, spec: ProblemSpec, parabolic: bool) -> np.ndarray:
    """
    Per-path value of the stopped functional.

    Stopped paths pay R + e^{-D} psi, exits pay R + e^{-D} g, the horizon pays
    R + e^{-D} g(T, .) for parabolic problems and R alone for elliptic ones.
    """
    exits = sample.exit_for(spec.variant)
    values = np.array(exits.running, dtype=float)
    stopped = sample.stop.face == FACE_STOP
    if np.any(stopped):
        if spec.psi is None:
            raise CompatibilityError("stopping needs an obstacle psi", category="compatibility/missing-field",
                                     field="problem.psi")
        s = sample.stop
        values[stopped] = s.running[stopped] + np.exp(-s.discount[stopped]) * spec.psi(s.point[stopped],
                                                                                        s.time[stopped])
    active = ~stopped
    through0 = active & (exits.face == FACE_GAMMA0)
    if np.any(through0) and not spec.g.covers_gamma0:
        k = int(np.nonzero(through0)[0][0])
        raise BoundaryDataMissing("a path exited through the degenerate face where g is not declared",
                                  where=exits.point[k].tolist(), variant=spec.variant)
    paid = active & ((exits.face == FACE_GAMMA1) | through0)
    if parabolic:
        paid |= active & (exits.face == FACE_HORIZON)
    if np.any(paid):
        values[paid] += np.exp(-exits.discount[paid]) * spec.g(exits.point[paid], exits.time[paid])
    return values


def _estimate(sample: PathSample, spec: ProblemSpec, config: SimConfig, scenario: Optional[str],
              model: DiffusionModel, parabolic: bool, bias: Optional[float],
              values: Optional[np.ndarray] = None) -> Estimate:
    if values is None:
        values = path_values(sample, spec, parabolic)
    mean, stderr = mean_stderr(values, config.antithetic)
    n = sample.n_paths
    touched = sample.touches > 0
    exits = sample.exit_for(spec.variant)
    censored = 0.0 if parabolic else float(np.count_nonzero(exits.face == FACE_HORIZON)) / n
    violations = sample.scheme_violations(scenario)
    if violations:
        get_logger().warning("paths touched the degenerate face in scenario A",
                             extra={"scenario": scenario, "n_paths": violations})
    stop_rate = None
    if np.any(sample.stop.face == FACE_STOP) or spec.is_obstacle:
        stop_rate = float(np.count_nonzero(sample.stop.face == FACE_STOP)) / n
    diagnostics = Diagnostics(float(np.count_nonzero(touched)) / n, censored, violations, spec.variant,
                              scenario, model.extension_beyond_scope, stop_rate)
    return Estimate(mean, stderr, n, bias, diagnostics, config.dt)


def _prepare(model: DiffusionModel, domain: DomainSpec, spec: ProblemSpec, config: SimConfig,
             scenario: Optional[str]) -> Tuple[ProblemSpec, str]:
    if domain.d != model.d:
        raise ConfigError("domain and model dimensions differ", domain=domain.d, model=model.d)
    config.check_domain(domain)
    scenario = scenario or scenario_for(model, domain)
    if spec.boundary_mode is None:
        spec = spec.resolve(model, domain, scenario)
    return spec, scenario


def _stop_rule(rule: Any) -> Optional[StopRule]:
    if rule is None:
        return None
    if hasattr(rule, "as_stop_rule"):
        return rule.as_stop_rule()
    if callable(rule):
        return rule
    raise ConfigError("stopping rule must be a StoppingPolicy or a callable", got=type(rule).__name__)


# ---------------------------------------------------------------------------
# public estimators


def estimate_elliptic(
    model: DiffusionModel,
    domain: DomainSpec,
    spec: ProblemSpec,
    x: Any,
    config: SimConfig,
    scenario: Optional[str] = None,
    M: Optional[float] = None,
    rule: Any = None,
    stream: int = 0,
) -> Estimate:
    """
    Estimate u(x) for the elliptic problem on the horizon [0, config.t_max].

    Args:
        model: Diffusion model
        domain: Box domain
        spec: Elliptic problem data
        x: Start point in the domain or on the boundary portion carrying data
        config: Simulation controls; t_max is the truncation horizon
        scenario: Scenario of the origin; classified when omitted
        M: Supermartingale constant for the bias bound; computed when omitted
        rule: Optional stopping rule (turns the estimate into J)
        stream: RNG stream index

    Returns:
        Estimate with the truncation-bias bound of the horizon
    """
    if spec.is_parabolic:
        raise ConfigError("estimate_elliptic needs an elliptic problem", kind=spec.kind)
    spec, scenario = _prepare(model, domain, spec, config, scenario)
    x = np.asarray(x, dtype=float)
    _check_start(domain, spec, x)
    engine = PathEngine(model, domain, config, 0.0, config.t_max, running_cost=spec.f.evaluator,
                        until=spec.variant, stop_rule=_stop_rule(rule))
    sample = run_paths(engine, x, config, stream=stream)
    bias = truncation_bias(model, spec, x, config.t_max, 0.0, M)
    return _estimate(sample, spec, config, scenario, model, False, bias)


def estimate_parabolic(
    model: DiffusionModel,
    domain: DomainSpec,
    spec: ProblemSpec,
    t: float,
    x: Any,
    config: SimConfig,
    scenario: Optional[str] = None,
    rule: Any = None,
    stream: int = 0,
) -> Estimate:
    """Estimate u(t, x) for the parabolic problem with terminal time spec.T."""
    if not spec.is_parabolic:
        raise ConfigError("estimate_parabolic needs a parabolic problem", kind=spec.kind)
    T = float(spec.T)
    if not 0.0 <= t <= T:
        raise OutOfRange("need 0 <= t <= T", t=t, T=T)
    spec, scenario = _prepare(model, domain, spec, config, scenario)
    x = np.asarray(x, dtype=float)
    _check_start(domain, spec, x)
    diagnostics = Diagnostics(0.0, 0.0, 0, spec.variant, scenario, model.extension_beyond_scope)
    if t == T:
        return Estimate(float(spec.g(x, T)[0]), 0.0, 0, 0.0, diagnostics, config.dt)
    engine = PathEngine(model, domain, config, t, T, running_cost=spec.f.evaluator, until=spec.variant,
                        stop_rule=_stop_rule(rule))
    sample = run_paths(engine, x, config, stream=stream)
    return _estimate(sample, spec, config, scenario, model, True, 0.0)


def j_functional(
    model: DiffusionModel,
    domain: DomainSpec,
    spec: ProblemSpec,
    x: Any,
    rule: Any,
    config: SimConfig,
    t: Optional[float] = None,
    scenario: Optional[str] = None,
    M: Optional[float] = None,
    stream: int = 0,
) -> Estimate:
    """
    Evaluate J for the exit time of spec.variant and the stop time of rule.

    Paths stopped strictly before their exit pay psi; all others pay the
    boundary (or terminal) term. A StoppingPolicy or a callable
    (t, states, node) -> mask is accepted as rule.
    """
    if spec.psi is None:
        raise CompatibilityError("J needs an obstacle psi", category="compatibility/missing-field",
                                 field="problem.psi")
    if spec.is_parabolic:
        return estimate_parabolic(model, domain, spec, 0.0 if t is None else t, x, config, scenario, rule, stream)
    return estimate_elliptic(model, domain, spec, x, config, scenario, M, rule, stream)


@dataclass
class SweepRow:
    point_id: int
    t: float
    x: List[float]
    estimate: Estimate


def price_sweep(
    model: DiffusionModel,
    domain: DomainSpec,
    spec: ProblemSpec,
    points: Sequence[Any],
    config: SimConfig,
    times: Optional[Sequence[float]] = None,
    scenario: Optional[str] = None,
) -> List[SweepRow]:
    """Estimates over a list of points (and start times for parabolic problems)."""
    scenario = scenario or scenario_for(model, domain)
    rows: List[SweepRow] = []
    starts = list(times) if (times and spec.is_parabolic) else [0.0]
    M: Optional[float] = None
    if not spec.is_parabolic:
        try:
            M = compute_M(model).M
        except ConditionLikelyViolated:
            M = None
    k = 0
    for t in starts:
        for x in as_points(points):
            if spec.is_parabolic:
                est = estimate_parabolic(model, domain, spec, t, x, config, scenario)
            else:
                est = estimate_elliptic(model, domain, spec, x, config, scenario, M)
            rows.append(SweepRow(k, float(t), [float(v) for v in x], est))
            k += 1
    return rows
