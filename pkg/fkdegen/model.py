"""
Degenerate diffusion model on the half-space.

The generator is  A v = -1/2 tr(a D^2 v) - <b, Dv> + c v  with
a(x) = x_d^beta * a~(x),  sigma(x) = x_d^(beta/2) * sigma~(x),  and the last
row of sigma~ equal to rho_j * sigma0(x_d). Models are immutable and their
evaluators are pure, so they can be shared across worker threads.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AssumptionViolation,
    BoundaryPoint,
    ConditionLikelyViolated,
    ConfigError,
    EvaluationFailure,
    ParamOutOfRange,
    UnknownPreset,
)
from .fields import Affine, Constant, Field, as_points, field_from_config


@dataclass(frozen=True)
class HolderData:
    """Local Hoelder data of b_d at the origin: |b_d(y) - b_d(0)| <= L y^gamma for y < kappa."""

    gamma: float
    L: float
    kappa: float

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0 and self.L > 0.0 and 0.0 < self.kappa < 1.0):
            raise ParamOutOfRange("holder data needs gamma in (0,1], L > 0, kappa in (0,1)",
                                  gamma=self.gamma, L=self.L, kappa=self.kappa)


@dataclass(frozen=True)
class DiffusionModel:
    d: int
    m: int
    beta: float
    drift: Tuple[Field, ...]
    reduced_vol: Tuple[Tuple[Field, ...], ...]
    rho: Tuple[float, ...]
    sigma0: Field
    killing: Field
    c0: float
    growth_K: float
    ellipticity_delta: float
    holder: Optional[HolderData] = None
    sigma0_locally_constant: bool = False
    name: str = "custom"
    coordinates: Tuple[str, ...] = ()
    params: Dict[str, float] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.d < 1 or self.m < 1:
            raise ConfigError("model needs d >= 1 and m >= 1", d=self.d, m=self.m)
        if len(self.drift) != self.d:
            raise ConfigError("drift must have d components", d=self.d, got=len(self.drift))
        if len(self.reduced_vol) != self.d - 1 or any(len(row) != self.m for row in self.reduced_vol):
            raise ConfigError("reduced_vol must have d-1 rows of m entries (last row comes from rho*sigma0)")
        if len(self.rho) != self.m:
            raise ConfigError("rho must have m entries", m=self.m, got=len(self.rho))

    @property
    def extension_beyond_scope(self) -> bool:
        """One-dimensional runs treat the degenerate coordinate on its own."""
        return self.d == 1

    def _eval(self, fn: Field, x: np.ndarray, what: str) -> np.ndarray:
        try:
            values = fn(x)
        except Exception as exc:
            raise EvaluationFailure(f"{what} evaluator failed: {exc}", coefficient=what) from exc
        if not np.all(np.isfinite(values)):
            bad = x[~np.isfinite(values)][0]
            raise EvaluationFailure(f"{what} is not finite", coefficient=what, where=bad.tolist())
        return values

    def on_axis(self, y: Any) -> np.ndarray:
        """Points (0, ..., 0, y) used to evaluate the last-coordinate functions."""
        ys = np.atleast_1d(np.asarray(y, dtype=float))
        pts = np.zeros((ys.size, self.d))
        pts[:, -1] = ys
        return pts

    def b(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        return np.column_stack([self._eval(f, pts, f"drift[{i}]") for i, f in enumerate(self.drift)])

    def b_d(self, y: Any) -> np.ndarray:
        return self._eval(self.drift[-1], self.on_axis(y), "drift[d]")

    def sigma0_at(self, y: Any) -> np.ndarray:
        return self._eval(self.sigma0, self.on_axis(y), "sigma0")

    def sigma_tilde(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        n = pts.shape[0]
        out = np.empty((n, self.d, self.m))
        for i, row in enumerate(self.reduced_vol):
            for j, entry in enumerate(row):
                out[:, i, j] = self._eval(entry, pts, f"reduced_vol[{i}][{j}]")
        out[:, -1, :] = self._eval(self.sigma0, pts, "sigma0")[:, None] * np.asarray(self.rho)[None, :]
        return out

    def degeneracy(self, x: Any, power: float) -> np.ndarray:
        """(x_d^+)^power, with 0^power = 0 for power > 0."""
        xd = np.maximum(as_points(x)[:, -1], 0.0)
        return np.power(xd, power)

    def sigma(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        return self.degeneracy(pts, 0.5 * self.beta)[:, None, None] * self.sigma_tilde(pts)

    def a_tilde(self, x: Any) -> np.ndarray:
        st = self.sigma_tilde(x)
        return np.einsum("nij,nkj->nik", st, st)

    def a(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        return self.degeneracy(pts, self.beta)[:, None, None] * self.a_tilde(pts)

    def c(self, x: Any) -> np.ndarray:
        return self._eval(self.killing, as_points(x), "killing")

    def eta2(self, y: Any) -> np.ndarray:
        """Squared volatility of the degenerate coordinate, y^beta sigma0(y)^2."""
        ys = np.atleast_1d(np.asarray(y, dtype=float))
        return np.power(ys, self.beta) * self.sigma0_at(ys) ** 2


@dataclass(frozen=True)
class GeneratorField(Field):
    """The field f = A u for a model and a catalog field u."""

    model: DiffusionModel
    u: Field

    @property
    def time_dependent(self) -> bool:  # type: ignore[override]
        return self.u.time_dependent

    @property
    def smooth(self) -> bool:  # type: ignore[override]
        return self.u.smooth

    def evaluate(self, x, t):
        return generator_values(self.model, self.u, x, t)

    def to_config(self):
        return {"kind": "generator", "of": self.u.to_config()}


def generator_values(model: DiffusionModel, u: Field, x: Any, t: Any = 0.0,
                     h: Optional[float] = None) -> np.ndarray:
    """Evaluate A u at the rows of x, including points on the degenerate face."""
    pts = as_points(x)
    if h is None and u.analytic_derivatives:
        grad = u.gradient(pts, t)
        hess = u.hessian(pts, t)
    else:
        step = h if h is not None else 1e-4
        grad = u.fd_gradient(pts, t, step)
        hess = u.fd_hessian(pts, t, step)
    a = model.a(pts)
    second = 0.5 * np.einsum("nij,nij->n", a, hess)
    first = np.einsum("ni,ni->n", model.b(pts), grad)
    return -second - first + model.c(pts) * u(pts, t)


def apply_generator(model: DiffusionModel, u: Field, x: Any, t: float = 0.0,
                    h: Optional[float] = None) -> Any:
    """
    Apply the generator to u at interior points.

    Args:
        model: Diffusion model
        u: Twice-differentiable field
        x: Point (d,) or points (n, d) with x_d > 0
        t: Time passed to time-dependent fields
        h: Central-difference step; None uses analytic derivatives when available

    Returns:
        A float for a single point, an array for several
    """
    pts = as_points(x)
    if pts.shape[1] != model.d:
        raise ConfigError("point dimension does not match the model", d=model.d, got=pts.shape[1])
    if np.any(pts[:, -1] <= 0.0):
        bad = pts[pts[:, -1] <= 0.0][0]
        raise BoundaryPoint("generator is evaluated at interior points only (x_d > 0)", where=bad.tolist())
    values = generator_values(model, u, pts, t, h)
    return float(values[0]) if np.asarray(x).ndim <= 1 else values


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class GridSpec:
    """Sampling grid for assumption checks over the truncated half-space box."""

    points_per_axis: int = 64
    boundary_samples: int = 32
    extent: float = 2.0
    lower: Optional[Tuple[float, ...]] = None
    upper: Optional[Tuple[float, ...]] = None
    max_points: int = 1 << 18

    def bounds(self, d: int) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array(self.lower, dtype=float) if self.lower is not None else np.full(d, -self.extent)
        hi = np.array(self.upper, dtype=float) if self.upper is not None else np.full(d, self.extent)
        lo = np.where(np.isfinite(lo), lo, -self.extent)
        hi = np.where(np.isfinite(hi), hi, self.extent)
        lo[-1] = 0.0
        return lo, hi

    def interior_points(self, d: int) -> np.ndarray:
        if self.points_per_axis < 1:
            raise ConfigError("validation grid is empty", points_per_axis=self.points_per_axis)
        lo, hi = self.bounds(d)
        per_axis = max(2, min(self.points_per_axis, int(self.max_points ** (1.0 / d))))
        axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(d - 1)]
        axes.append(np.linspace(hi[-1] / per_axis, hi[-1], per_axis))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def boundary_points(self, d: int) -> np.ndarray:
        lo, hi = self.bounds(d)
        k = max(1, self.boundary_samples)
        pts = np.zeros((k, d))
        for i in range(d - 1):
            pts[:, i] = np.linspace(lo[i], hi[i], k)
        return pts

    def points(self, d: int) -> np.ndarray:
        return np.vstack([self.interior_points(d), self.boundary_points(d)])


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst: float
    where: Optional[List[float]] = None
    hard: bool = True
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "where": self.where, "hard": self.hard, "note": self.note}


@dataclass
class ValidationReport:
    model: str
    checks: List[AssumptionCheck]
    notes: List[str] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return all(check.passed for check in self.checks if check.hard)

    def failures(self) -> List[AssumptionCheck]:
        return [check for check in self.checks if check.hard and not check.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {"model": self.model, "accepted": self.accepted,
                "checks": [c.to_dict() for c in self.checks], "notes": list(self.notes)}


def _worst(values: np.ndarray, pts: np.ndarray) -> Tuple[float, List[float]]:
    k = int(np.argmax(values))
    return float(values[k]), pts[k].tolist()


def validate_model(model: DiffusionModel, grid: Optional[GridSpec] = None, strict: bool = True) -> ValidationReport:
    """
    Check the standing assumptions of the model on a sample grid.

    Args:
        model: Model to check
        grid: Sample grid (defaults to 64 points per axis plus 32 boundary samples)
        strict: Raise AssumptionViolation on the first failing hard assumption

    Returns:
        Report listing every assumption with its worst offending sample
    """
    grid = grid or GridSpec()
    pts = grid.points(model.d)
    if np.any(pts[:, -1] < 0.0):
        raise ConfigError("validation grid leaves the closed half-space")
    checks: List[AssumptionCheck] = []
    notes: List[str] = []
    if model.extension_beyond_scope:
        notes.append("d = 1: the degenerate coordinate is treated on its own (extension beyond the d >= 2 setting)")

    checks.append(AssumptionCheck("beta-range", 0.0 < model.beta <= 2.0, float(model.beta)))

    rho = np.asarray(model.rho, dtype=float)
    rho_err = abs(float(np.linalg.norm(rho)) - 1.0)
    checks.append(AssumptionCheck("rho-norm", rho_err <= 1e-12 and bool(np.all(rho > 0.0)), rho_err,
                                  note="needs rho_j > 0 and ||rho|| = 1"))

    axis_pts = pts.copy()
    axis_pts[:, :-1] = 0.0
    bd_full = model.b(pts)[:, -1]
    bd_axis = model.b(axis_pts)[:, -1]
    dev = np.abs(bd_full - bd_axis) / (1.0 + np.abs(bd_axis))
    worst, where = _worst(dev, pts)
    checks.append(AssumptionCheck("drift-last-coordinate", worst <= 1e-12, worst, where))

    s0_full = model._eval(model.sigma0, pts, "sigma0")
    s0_axis = model._eval(model.sigma0, axis_pts, "sigma0")
    dev = np.abs(s0_full - s0_axis) / (1.0 + np.abs(s0_axis))
    worst, where = _worst(dev, pts)
    checks.append(AssumptionCheck("sigma0-last-coordinate", worst <= 1e-12, worst, where))

    bd0 = float(model.b_d(0.0)[0])
    checks.append(AssumptionCheck("nonneg-bd", bd0 >= 0.0, bd0, [0.0] * model.d))

    c_vals = model.c(pts)
    k = int(np.argmin(c_vals))
    floor_ok = model.c0 > 0.0 and float(c_vals[k]) >= model.c0 * (1.0 - 1e-12)
    checks.append(AssumptionCheck("killing-floor", floor_ok, float(c_vals[k]), pts[k].tolist(),
                                  note=f"c0 = {model.c0}"))

    eig = np.linalg.eigvalsh(model.a_tilde(pts))[:, 0]
    k = int(np.argmin(eig))
    ell_ok = model.ellipticity_delta > 0.0 and float(eig[k]) >= model.ellipticity_delta * (1.0 - 1e-9)
    checks.append(AssumptionCheck("ellipticity", ell_ok, float(eig[k]), pts[k].tolist(),
                                  note=f"delta = {model.ellipticity_delta}"))

    scale = 1.0 + np.linalg.norm(pts, axis=1)
    growth = np.maximum(np.linalg.norm(model.b(pts), axis=1),
                        np.linalg.norm(model.sigma(pts).reshape(pts.shape[0], -1), axis=1)) / scale
    worst, where = _worst(growth, pts)
    checks.append(AssumptionCheck("linear-growth", worst <= model.growth_K * (1.0 + 1e-12), worst, where,
                                  note=f"K = {model.growth_K}"))

    sig = model.sigma(pts)
    factor = model.degeneracy(pts, 0.5 * model.beta)[:, None, None] * model.sigma_tilde(pts)
    a_dev = np.abs(np.einsum("nij,nkj->nik", sig, sig) - model.degeneracy(pts, model.beta)[:, None, None]
                   * model.a_tilde(pts)).reshape(pts.shape[0], -1).max(axis=1)
    dev = np.abs(sig - factor).reshape(pts.shape[0], -1).max(axis=1) + a_dev / (1.0 + a_dev)
    worst, where = _worst(dev, pts)
    checks.append(AssumptionCheck("sigma-factorization", worst <= 1e-12, worst, where))

    if model.holder is not None:
        h = model.holder
        ys = np.linspace(h.kappa / 64.0, h.kappa * (1.0 - 1e-9), 64)
        ratio = np.abs(model.b_d(ys) - bd0) / np.power(ys, h.gamma)
        worst, where = _worst(ratio, model.on_axis(ys))
        checks.append(AssumptionCheck("holder", worst <= h.L * (1.0 + 1e-9), worst, where, hard=False))

    report = ValidationReport(model.name, checks, notes)
    if strict:
        for check in report.failures():
            raise AssumptionViolation(check.name, where=check.where, worst=check.worst, report=report.to_dict())
    return report


# ---------------------------------------------------------------------------
# supermartingale constant


@dataclass
class MResult:
    M: float
    p: float
    condition_holds: bool
    tail_slope: float
    shell_minima: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {"M": self.M, "p": self.p, "condition_holds": self.condition_holds,
                "tail_slope": self.tail_slope, "shell_minima": self.shell_minima}


def _supermartingale_objective(model: DiffusionModel, pts: np.ndarray, p: float) -> np.ndarray:
    r2 = np.sum(pts * pts, axis=1)
    b2 = np.sum(model.b(pts) ** 2, axis=1)
    s2 = np.sum(model.sigma(pts).reshape(pts.shape[0], -1) ** 2, axis=1)
    return model.c(pts) * r2 - (p * r2 + b2 / p + s2)


def compute_M(model: DiffusionModel, search_box: Optional[GridSpec] = None, resolution: int = 64,
              p: Optional[float] = None, n_shells: int = 8) -> MResult:
    """
    Approximate M = -inf [c|x|^2 - (p|x|^2 + |b|^2/p + |sigma|^2)], clamped at 0.

    Args:
        model: Diffusion model
        search_box: Grid box to search (defaults to extent 8 around the origin)
        resolution: Points per axis
        p: Candidate p; None sweeps c0/2, c0/4, c0/8
        n_shells: Radial shells used to judge the tail trend

    Returns:
        MResult with the smallest M among candidates whose tail stays bounded
    """
    box = search_box or GridSpec(points_per_axis=resolution, extent=8.0)
    box = GridSpec(points_per_axis=resolution, boundary_samples=box.boundary_samples, extent=box.extent,
                   lower=box.lower, upper=box.upper)
    pts = box.points(model.d)
    radius = np.linalg.norm(pts, axis=1)
    edges = np.quantile(radius, np.linspace(0.0, 1.0, n_shells + 1))
    candidates = [p] if p is not None else [model.c0 / 2.0, model.c0 / 4.0, model.c0 / 8.0]

    best: Optional[MResult] = None
    violated: Optional[MResult] = None
    for cand in candidates:
        if not cand > 0.0:
            raise ConditionLikelyViolated("p must be positive (is c0 > 0?)", p=cand, c0=model.c0)
        phi = _supermartingale_objective(model, pts, cand)
        minima, radii = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mask = (radius >= lo) & (radius <= hi)
            if np.any(mask):
                minima.append(float(phi[mask].min()))
                radii.append(float(hi))
        tail_r2 = np.asarray(radii[-4:]) ** 2
        tail_m = np.asarray(minima[-4:])
        slope = float(np.polyfit(tail_r2, tail_m, 1)[0]) if len(tail_m) >= 2 and np.ptp(tail_r2) > 0 else 0.0
        decreasing = all(b < a for a, b in zip(tail_m[:-1], tail_m[1:]))
        holds = not (decreasing and slope < -1e-9)
        result = MResult(max(0.0, -float(phi.min())), float(cand), holds, slope, minima)
        if holds and (best is None or result.M < best.M):
            best = result
        elif not holds and violated is None:
            violated = result
    if best is None:
        assert violated is not None
        raise ConditionLikelyViolated("supermartingale objective trends to -infinity along the sampled tail",
                                      p=violated.p, tail_slope=violated.tail_slope)
    return best


def growth_constant(K: float, c0: float, M: float) -> float:
    """
    Constant C with |J(x)| <= C (1 + ||x||) for data and coefficients of growth K.

    Sums the running-cost bound 2K/c0 |x| + K/c0 (1 + 2 sqrt(M/c0)) and two
    payoff bounds K (1 + sqrt(M/c0) + |x|).
    """
    root = math.sqrt(max(M, 0.0) / c0)
    constant_part = K / c0 * (1.0 + 2.0 * root) + 2.0 * K * (1.0 + root)
    linear_part = 2.0 * K / c0 + 2.0 * K
    return max(constant_part, linear_part)


# ---------------------------------------------------------------------------
# presets


def _check_params(name: str, params: Dict[str, Any], allowed: Sequence[str]) -> Dict[str, float]:
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise ParamOutOfRange(f"unknown parameter(s) for preset '{name}': {', '.join(unknown)}", preset=name)
    try:
        return {k: float(v) for k, v in params.items()}
    except (TypeError, ValueError) as exc:
        raise ParamOutOfRange(f"non-numeric parameter for preset '{name}'", preset=name) from exc


def _positive(name: str, **values: float) -> None:
    for key, value in values.items():
        if not (value > 0.0 and math.isfinite(value)):
            raise ParamOutOfRange(f"{name}: '{key}' must be positive", preset=name, param=key, value=value)


def _correlation(name: str, value: float) -> None:
    if not abs(value) < 1.0:
        raise ParamOutOfRange(f"{name}: correlation must satisfy |rho| < 1", preset=name, param="rho", value=value)


def _affine_holder(slope: float) -> HolderData:
    return HolderData(gamma=1.0, L=abs(slope) if slope != 0.0 else 1.0, kappa=0.5)


def _two_factor_rows(corr: float) -> Tuple[float, float]:
    """First row (cos phi, sin phi) whose correlation with rho = (1, 1)/sqrt 2 equals corr."""
    phi = math.asin(corr) - math.pi / 4.0
    return math.cos(phi), math.sin(phi)


def _delta_two_factor(corr: float, vol: float) -> float:
    mat = np.array([[1.0, corr * vol], [corr * vol, vol * vol]])
    return float(np.linalg.eigvalsh(mat)[0]) * (1.0 - 1e-9)


def heston(kappa: float, theta: float, sigma_v: float, rho: float, r: float,
           killing: Optional[float] = None) -> DiffusionModel:
    """Heston in (log-price, variance) coordinates; c = r unless a killing rate is given."""
    _positive("heston", kappa=kappa, theta=theta, sigma_v=sigma_v)
    _correlation("heston", rho)
    rate = r if killing is None else killing
    _positive("heston", killing=rate)
    cos_phi, sin_phi = _two_factor_rows(rho)
    half = 1.0 / math.sqrt(2.0)
    params = {"kappa": kappa, "theta": theta, "sigma_v": sigma_v, "rho": rho, "r": r, "killing": rate}
    return DiffusionModel(
        d=2,
        m=2,
        beta=1.0,
        drift=(Affine(r, (0.0, -0.5)), Affine(kappa * theta, (0.0, -kappa))),
        reduced_vol=((Constant(cos_phi), Constant(sin_phi)),),
        rho=(half, half),
        sigma0=Constant(sigma_v),
        killing=Constant(rate),
        c0=rate,
        growth_K=max(abs(r) + kappa * theta, 0.5 + kappa, math.sqrt(1.0 + sigma_v ** 2)) * (1.0 + 1e-9),
        ellipticity_delta=_delta_two_factor(rho, sigma_v),
        holder=_affine_holder(kappa),
        sigma0_locally_constant=True,
        name="heston",
        coordinates=("log_price", "variance"),
        params=params,
    )


def _one_dim(name: str, drift: Field, sigma: float, beta: float, killing: float, K: float,
             slope: float, params: Dict[str, float]) -> DiffusionModel:
    return DiffusionModel(
        d=1,
        m=1,
        beta=beta,
        drift=(drift,),
        reduced_vol=(),
        rho=(1.0,),
        sigma0=Constant(sigma),
        killing=Constant(killing),
        c0=killing,
        growth_K=K * (1.0 + 1e-9),
        ellipticity_delta=sigma * sigma * (1.0 - 1e-9),
        holder=_affine_holder(slope),
        sigma0_locally_constant=True,
        name=name,
        coordinates=("y",),
        params=params,
    )


def _default_killing(mu: float, killing: Optional[float]) -> float:
    if killing is not None:
        return killing
    return mu if mu > 0.0 else 0.05


def cev(mu: float, sigma: float, beta: float, drift_floor: float = 0.0,
        killing: Optional[float] = None) -> DiffusionModel:
    """dY = (b0 + mu Y) dt + sigma Y^(beta/2) dW."""
    _positive("cev", sigma=sigma)
    if not 0.0 < beta < 2.0:
        raise ParamOutOfRange("cev: beta must lie in (0, 2)", preset="cev", param="beta", value=beta)
    if drift_floor < 0.0:
        raise ParamOutOfRange("cev: drift_floor must be >= 0", preset="cev", param="drift_floor", value=drift_floor)
    rate = _default_killing(mu, killing)
    _positive("cev", killing=rate)
    params = {"mu": mu, "sigma": sigma, "beta": beta, "drift_floor": drift_floor, "killing": rate}
    return _one_dim("cev", Affine(drift_floor, (mu,)), sigma, beta, rate,
                    max(drift_floor, abs(mu), sigma), mu, params)


def cir1d(kappa: float, theta: float, sigma: float, killing: Optional[float] = None) -> DiffusionModel:
    """dY = kappa (theta - Y) dt + sigma sqrt(Y) dW."""
    _positive("cir1d", kappa=kappa, theta=theta, sigma=sigma)
    rate = 0.05 if killing is None else killing
    _positive("cir1d", killing=rate)
    params = {"kappa": kappa, "theta": theta, "sigma": sigma, "killing": rate}
    return _one_dim("cir1d", Affine(kappa * theta, (-kappa,)), sigma, 1.0, rate,
                    max(kappa * theta, kappa, sigma), kappa, params)


def gbm1d(mu: float, sigma: float, killing: Optional[float] = None) -> DiffusionModel:
    """dY = mu Y dt + sigma Y dW; discounted at mu by default."""
    _positive("gbm1d", sigma=sigma)
    rate = _default_killing(mu, killing)
    _positive("gbm1d", killing=rate)
    params = {"mu": mu, "sigma": sigma, "killing": rate}
    return _one_dim("gbm1d", Affine(0.0, (mu,)), sigma, 2.0, rate, max(abs(mu), sigma), mu, params)


def sabr(nu: float, rho: float, killing: float = 0.05) -> DiffusionModel:
    """
    Normal SABR: dF = alpha dW1, d alpha = nu alpha dW2, corr(W1, W2) = rho.

    Coordinates are (forward, volatility): the volatility is the degenerate
    coordinate x_d, with beta = 2 so that x_d^(beta/2) = alpha multiplies
    both rows of the reduced volatility.
    """
    _positive("sabr", nu=nu, killing=killing)
    _correlation("sabr", rho)
    cos_phi, sin_phi = _two_factor_rows(rho)
    half = 1.0 / math.sqrt(2.0)
    params = {"nu": nu, "rho": rho, "killing": killing}
    return DiffusionModel(
        d=2,
        m=2,
        beta=2.0,
        drift=(Constant(0.0), Constant(0.0)),
        reduced_vol=((Constant(cos_phi), Constant(sin_phi)),),
        rho=(half, half),
        sigma0=Constant(nu),
        killing=Constant(killing),
        c0=killing,
        growth_K=math.sqrt(1.0 + nu * nu) * (1.0 + 1e-9),
        ellipticity_delta=_delta_two_factor(rho, nu),
        holder=HolderData(1.0, 1.0, 0.5),
        sigma0_locally_constant=True,
        name="sabr",
        coordinates=("forward", "volatility"),
        params=params,
    )


PRESETS = {
    "heston": (heston, ("kappa", "theta", "sigma_v", "rho", "r", "killing")),
    "cev": (cev, ("mu", "sigma", "beta", "drift_floor", "killing")),
    "sabr": (sabr, ("nu", "rho", "killing")),
    "cir1d": (cir1d, ("kappa", "theta", "sigma", "killing")),
    "gbm1d": (gbm1d, ("mu", "sigma", "killing")),
}


def preset(name: str, params: Optional[Dict[str, Any]] = None) -> DiffusionModel:
    """
    Build a preset model in normal form.

    Args:
        name: heston, cev, sabr, cir1d or gbm1d
        params: Keyword parameters of the preset

    Returns:
        The model
    """
    if name not in PRESETS:
        raise UnknownPreset(f"unknown preset '{name}'", preset=name, known=sorted(PRESETS))
    builder, allowed = PRESETS[name]
    values = _check_params(name, params or {}, allowed)
    try:
        return builder(**values)
    except TypeError as exc:
        raise ParamOutOfRange(f"missing parameter for preset '{name}': {exc}", preset=name) from exc


def custom_model(spec: Dict[str, Any]) -> DiffusionModel:
    """Build a model from a coefficient-catalog description (run-config 'custom' section)."""
    try:
        d = int(spec["d"])
        m = int(spec["m"])
        holder = spec.get("holder")
        return DiffusionModel(
            d=d,
            m=m,
            beta=float(spec["beta"]),
            drift=tuple(field_from_config(f) for f in spec["drift"]),
            reduced_vol=tuple(tuple(field_from_config(f) for f in row) for row in spec.get("reduced_vol", [])),
            rho=tuple(float(r) for r in spec["rho"]),
            sigma0=field_from_config(spec["sigma0"]),
            killing=field_from_config(spec["killing"]),
            c0=float(spec["c0"]),
            growth_K=float(spec["growth_K"]),
            ellipticity_delta=float(spec["ellipticity_delta"]),
            holder=HolderData(**holder) if holder else None,
            sigma0_locally_constant=bool(spec.get("sigma0_locally_constant", False)),
            name=str(spec.get("name", "custom")),
            coordinates=tuple(spec.get("coordinates", ())),
        )
    except KeyError as exc:
        raise ConfigError(f"custom model is missing '{exc.args[0]}'", field=f"model.custom.{exc.args[0]}") from exc
