"""
Optimal stopping for the obstacle problems.

lsmc_value runs least-squares Monte Carlo (backward regression of the
continuation value on a polynomial basis), then resimulates fresh paths
under the learned policy for a low-biased headline value. policy_from_pde
turns an obstacle solution of the finite-difference oracle into a
continuation-region policy.
"""
import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .domain import FACE_HORIZON, DomainSpec
from .errors import CompatibilityError, ConfigError, GridTooCoarse, OutOfRange, RegressionIllConditioned
from .fields import ScalarField
from .fk_estimate import (
    Estimate,
    ProblemSpec,
    _check_start,
    _estimate,
    _prepare,
    path_values,
    truncation_bias,
)
from .logging_utils import get_logger
from .model import DiffusionModel
from .pde_oracle import PdeSolution
from .simulate import PathEngine, PathSample, SimConfig, StopRule, node_times, run_paths


POLICY_KINDS = ("immediate", "never", "region", "regression")
CONDITION_LIMIT = 1e12
TRAIN_STREAM = 1
EVAL_STREAM = 2
TIME_MATCH = 1e-9


# ---------------------------------------------------------------------------
# regression basis


def monomial_exponents(d: int, degree: int) -> np.ndarray:
    """All exponent vectors of total degree <= degree, constant first."""
    terms = [e for e in itertools.product(range(degree + 1), repeat=d) if sum(e) <= degree]
    terms.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
    return np.asarray(terms, dtype=int).reshape(-1, d)


@dataclass(frozen=True, eq=False)
class PolynomialBasis:
    degree: int
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, states: np.ndarray, degree: int) -> "PolynomialBasis":
        center = states.mean(axis=0)
        scale = states.std(axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(degree, center, scale)

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.center.size, self.degree)

    def design(self, states: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(states) - self.center) / self.scale
        exps = self.exponents
        return np.prod(z[:, None, :] ** exps[None, :, :], axis=2)


def default_degree(d: int) -> int:
    return 5 if d == 1 else 3


def regress(states: np.ndarray, target: np.ndarray, degree: int) -> Tuple[PolynomialBasis, np.ndarray]:
    """
    Least-squares fit of target on the standardised polynomial basis.

    Raises:
        RegressionIllConditioned: too few samples or a near-singular design
    """
    basis = PolynomialBasis.fit(states, degree)
    X = basis.design(states)
    if X.shape[0] < 2 * X.shape[1]:
        raise RegressionIllConditioned("not enough in-the-money paths for the basis",
                                       samples=int(X.shape[0]), terms=int(X.shape[1]))
    coef, _, rank, sv = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1] or sv[-1] <= 0.0 or sv[0] / sv[-1] > CONDITION_LIMIT:
        raise RegressionIllConditioned("regression design is ill-conditioned", rank=int(rank),
                                       terms=int(X.shape[1]))
    return basis, coef


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True, eq=False)
class RegressionSlab:
    time: float
    basis: PolynomialBasis
    coef: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def continuation(self, states: np.ndarray) -> np.ndarray:
        return self.basis.design(states) @ self.coef


@dataclass(frozen=True, eq=False)
class ContinuationRegion:
    """Nodal gap u - psi on a (time x) space grid; continuation where the gap exceeds tol."""

    axes: Tuple[np.ndarray, ...]
    gap: np.ndarray
    tol: float
    parabolic: bool
    _interp: Any = field(default=None, repr=False)

    def __post_init__(self) -> None:
        interp = RegularGridInterpolator(self.axes, self.gap, method="linear", bounds_error=False, fill_value=None)
        object.__setattr__(self, "_interp", interp)

    def stop_mask(self, t: float, states: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(states)
        if self.parabolic:
            stamp = np.full((pts.shape[0], 1), float(t))
            pts = np.hstack([np.clip(stamp, self.axes[0][0], self.axes[0][-1]), pts])
        return self._interp(pts) <= self.tol

    @property
    def continuation_fraction(self) -> float:
        return float(np.mean(self.gap > self.tol))


@dataclass(frozen=True, eq=False)
class StoppingPolicy:
    """
    A stopping rule usable by the path engine.

    immediate stops at the start, never runs to the exit, region stops on the
    first node outside the continuation set, regression stops in the money
    when psi reaches the regressed continuation value on an exercise date.
    """

    kind: str
    time_grid: Tuple[float, ...] = ()
    slabs: Tuple[RegressionSlab, ...] = ()
    region: Optional[ContinuationRegion] = None
    psi: Optional[ScalarField] = None

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind '{self.kind}'", known=list(POLICY_KINDS))
        if self.kind == "region" and self.region is None:
            raise ConfigError("region policies need a continuation region")
        if self.kind == "regression" and self.psi is None:
            raise ConfigError("regression policies need psi")

    def _slab(self, t: float) -> Optional[RegressionSlab]:
        for slab in self.slabs:
            if abs(slab.time - t) <= TIME_MATCH * (1.0 + abs(t)):
                return slab
        return None

    def as_stop_rule(self) -> Optional[StopRule]:
        if self.kind == "never":
            return None
        if self.kind == "immediate":
            return lambda t, states, node: np.ones(states.shape[0], dtype=bool)
        if self.kind == "region":
            region = self.region
            return lambda t, states, node: region.stop_mask(t, states)

        def regression_rule(t: float, states: np.ndarray, node: int) -> np.ndarray:
            slab = self._slab(t)
            if slab is None:
                return np.zeros(states.shape[0], dtype=bool)
            payoff = self.psi(states, t)
            return (payoff > 0.0) & (payoff >= slab.continuation(states))

        return regression_rule

    def summary(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind, "n_dates": len(self.time_grid)}
        if self.kind == "regression":
            out["basis_degree"] = self.slabs[0].basis.degree if self.slabs else None
            out["n_regressions"] = len(self.slabs)
        if self.region is not None:
            out["continuation_fraction"] = self.region.continuation_fraction
        return out


@dataclass
class StoppingResult:
    """Headline (low, resimulated) estimate, the policy and the in-sample (high) value."""

    estimate: Estimate
    policy: StoppingPolicy
    value_high: float
    basis_degree: int
    n_exercise: int
    training_paths: int

    def __iter__(self) -> Iterator[Any]:
        yield self.estimate
        yield self.policy


# ---------------------------------------------------------------------------
# least-squares Monte Carlo


def exercise_nodes(n_steps: int, n_exercise: int) -> List[int]:
    """Interior node indices spread evenly over the time grid."""
    if n_exercise < 1:
        raise ConfigError("n_exercise must be positive", n_exercise=n_exercise)
    picks = np.unique(np.round(np.linspace(0, n_steps, n_exercise + 1)).astype(int))
    return [int(k) for k in picks if 0 < k < n_steps]


def _horizon_payoff(sample: PathSample, spec: ProblemSpec, parabolic: bool) -> np.ndarray:
    """Per-path cash flows without stopping, plus e^{-D} max(psi, 0) at an elliptic horizon."""
    values = path_values(sample, spec, parabolic)
    if not parabolic:
        exits = sample.exit_for(spec.variant)
        censored = exits.face == FACE_HORIZON
        if np.any(censored):
            psi = spec.psi(exits.point[censored], exits.time[censored])
            values[censored] += np.exp(-exits.discount[censored]) * np.maximum(psi, 0.0)
    return values


def _backward(sample: PathSample, spec: ProblemSpec, nodes: Sequence[int], degree: int,
              parabolic: bool) -> Tuple[np.ndarray, List[RegressionSlab], int]:
    logger = get_logger()
    cash = _horizon_payoff(sample, spec, parabolic)
    slabs: List[RegressionSlab] = []
    used = degree
    for node in sorted(nodes, reverse=True):
        snap = sample.snapshots[node]
        payoff = spec.psi(snap.states, snap.time)
        itm = snap.alive & (payoff > 0.0)
        if not np.any(itm):
            continue
        states = snap.states[itm]
        target = (cash[itm] - snap.running[itm]) * np.exp(snap.discount[itm])
        fitted = None
        deg = used
        while fitted is None:
            try:
                fitted = regress(states, target, deg)
            except RegressionIllConditioned as exc:
                if deg == 0:
                    break
                logger.warning("regression ill-conditioned, lowering the basis degree",
                               extra={"detail": exc.message, "iterations": deg - 1})
                deg -= 1
        if fitted is None:
            continue
        used = deg
        basis, coef = fitted
        slab = RegressionSlab(snap.time, basis, coef, states.min(axis=0), states.max(axis=0))
        slabs.append(slab)
        exercise = payoff[itm] >= slab.continuation(states)
        rows = np.nonzero(itm)[0][exercise]
        cash[rows] = snap.running[rows] + np.exp(-snap.discount[rows]) * payoff[itm][exercise]
    slabs.reverse()
    return cash, slabs, used


def _lsmc(model: DiffusionModel, domain: DomainSpec, spec: ProblemSpec, t0: float, T: float, x: Any,
          config: SimConfig, degree: Optional[int], n_exercise: int, scenario: Optional[str],
          parabolic: bool, bias: Optional[float]) -> StoppingResult:
    if spec.psi is None:
        raise CompatibilityError("optimal stopping needs psi", category="compatibility/missing-field",
                                 field="problem.psi")
    spec, scenario = _prepare(model, domain, spec, config, scenario)
    x = np.asarray(x, dtype=float)
    _check_start(domain, spec, x)
    degree = default_degree(model.d) if degree is None else int(degree)
    times = node_times(t0, T, config.dt)
    nodes = exercise_nodes(times.size - 1, n_exercise)
    f = spec.f.evaluator

    training = PathEngine(model, domain, config, t0, T, running_cost=f, until=spec.variant, snapshot_nodes=nodes)
    sample = run_paths(training, x, config, stream=TRAIN_STREAM, metrics_engine="lsmc")
    cash, slabs, used = _backward(sample, spec, nodes, degree, parabolic)
    start_payoff = float(spec.psi(x, t0)[0])
    continuation = float(np.mean(cash))
    value_high = max(start_payoff, continuation)
    grid = tuple(float(times[k]) for k in nodes)

    if start_payoff >= continuation:
        policy = StoppingPolicy("immediate", (float(t0),), psi=spec.psi)
    elif slabs:
        policy = StoppingPolicy("regression", grid, tuple(slabs), psi=spec.psi)
    else:
        policy = StoppingPolicy("never", grid)

    evaluation = PathEngine(model, domain, config, t0, T, running_cost=f, until=spec.variant,
                            stop_rule=policy.as_stop_rule())
    resim = run_paths(evaluation, x, config, stream=EVAL_STREAM, metrics_engine="lsmc")
    values = _horizon_payoff(resim, spec, parabolic)
    estimate = _estimate(resim, spec, config, scenario, model, parabolic, bias, values)
    get_logger().debug("lsmc finished", extra={"n_paths": sample.n_paths, "result": policy.kind})
    return StoppingResult(estimate, policy, value_high, used, len(nodes), sample.n_paths)


def lsmc_value(model: DiffusionModel, domain: DomainSpec, spec: ProblemSpec, t: float, x: Any,
               config: SimConfig, degree: Optional[int] = None, n_exercise: int = 50,
               scenario: Optional[str] = None) -> StoppingResult:
    """
    Value of the parabolic obstacle problem at (t, x) by least-squares Monte Carlo.

    Args:
        model: Diffusion model
        domain: Box domain
        spec: parabolic_obstacle problem
        t: Start time in [0, T]
        x: Start point
        config: Simulation controls
        degree: Total degree of the polynomial basis (5 for d = 1, else 3)
        n_exercise: Number of exercise intervals on [t, T]
        scenario: Scenario of the origin; classified when omitted

    Returns:
        StoppingResult; unpacks as (estimate, policy)
    """
    if spec.kind != "parabolic_obstacle":
        raise ConfigError("lsmc_value needs a parabolic_obstacle problem", kind=spec.kind)
    T = float(spec.T)
    if not 0.0 <= t <= T:
        raise OutOfRange("need 0 <= t <= T", t=t, T=T)
    return _lsmc(model, domain, spec, t, T, x, config, degree, n_exercise, scenario, True, 0.0)


def elliptic_obstacle_value(model: DiffusionModel, domain: DomainSpec, spec: ProblemSpec, x: Any,
                            config: SimConfig, degree: Optional[int] = None, n_exercise: int = 50,
                            scenario: Optional[str] = None, M: Optional[float] = None) -> StoppingResult:
    """
    Elliptic obstacle value through the horizon-truncated stopping problem on [0, t_max].

    Paths still running at t_max pay e^{-D} max(psi, 0).
    """
    if spec.kind != "elliptic_obstacle":
        raise ConfigError("elliptic_obstacle_value needs an elliptic_obstacle problem", kind=spec.kind)
    bias = truncation_bias(model, spec, x, config.t_max, 0.0, M)
    return _lsmc(model, domain, spec, 0.0, config.t_max, x, config, degree, n_exercise, scenario, False, bias)


# ---------------------------------------------------------------------------
# policies from the finite-difference oracle


def _region(solution: PdeSolution, psi: ScalarField, region_tol: Optional[float]) -> ContinuationRegion:
    pts = solution.grid.points()
    if solution.parabolic:
        psi_nodes = np.stack([psi(pts, t).reshape(solution.grid.shape) for t in solution.times])
        axes = (solution.times,) + solution.grid.axes
    else:
        psi_nodes = psi(pts, 0.0).reshape(solution.grid.shape)
        axes = solution.grid.axes
    gap = solution.values - psi_nodes
    scale = float(np.max(np.abs(solution.values)))
    tol = 1e-8 * (1.0 + scale) if region_tol is None else float(region_tol)
    return ContinuationRegion(tuple(axes), gap, tol, solution.parabolic)


def _boundary_of(region: ContinuationRegion) -> List[Tuple[float, float]]:
    """First stop/continue transition along the last axis, for each level of the remaining axes."""
    gap = region.gap
    if gap.ndim == 3 and region.parabolic:
        gap = gap[0]
        axes = region.axes[1:]
    else:
        axes = region.axes
    if gap.ndim > 2:
        return []
    if gap.ndim == 1:
        gap = gap[None, :]
        levels = np.array([0.0])
    else:
        levels = axes[0]
    line = axes[-1]
    points: List[Tuple[float, float]] = []
    for level, row in zip(levels, gap):
        stop = row <= region.tol
        change = np.nonzero(stop[:-1] != stop[1:])[0]
        if change.size == 0:
            continue
        j = int(change[0])
        g0, g1 = row[j] - region.tol, row[j + 1] - region.tol
        frac = 0.0 if g1 == g0 else float(np.clip(-g0 / (g1 - g0), 0.0, 1.0))
        points.append((float(level), float(line[j] + frac * (line[j + 1] - line[j]))))
    return points


def exercise_boundary(policy: StoppingPolicy, n_scan: int = 400) -> List[Tuple[float, float]]:
    """
    Free-boundary polyline of a policy as (level, location) pairs.

    Region policies give one point per time slab (parabolic, d = 1) or per
    leading-axis node (elliptic, d = 2); regression policies in one dimension
    give one point per exercise date.
    """
    if policy.kind == "region":
        return _boundary_of(policy.region)
    if policy.kind != "regression" or not policy.slabs or policy.slabs[0].basis.center.size != 1:
        return []
    points: List[Tuple[float, float]] = []
    for slab in policy.slabs:
        scan = np.linspace(slab.lower[0], slab.upper[0], n_scan)[:, None]
        payoff = policy.psi(scan, slab.time)
        stop = (payoff > 0.0) & (payoff >= slab.continuation(scan))
        change = np.nonzero(stop[:-1] != stop[1:])[0]
        if change.size:
            points.append((slab.time, float(scan[change[0] + 1, 0])))
    return points


def policy_from_pde(solution: PdeSolution, psi: ScalarField, refined: Optional[PdeSolution] = None,
                    region_tol: Optional[float] = None) -> StoppingPolicy:
    """
    Continuation-region policy from an obstacle solution.

    Args:
        solution: Obstacle solution of the finite-difference oracle
        psi: Obstacle
        refined: Optional solution on the refined grid; the free boundary may
            move by at most two coarse cells between the two
        region_tol: Membership threshold on u - psi (default 1e-8 (1 + max|u|))

    Raises:
        GridTooCoarse: when the free boundary moves too far under refinement
    """
    region = _region(solution, psi, region_tol)
    times = tuple(float(t) for t in solution.times) if solution.parabolic else ()
    if refined is not None:
        _compare_boundaries(region, _region(refined, psi, region_tol), solution)
    if region.continuation_fraction == 1.0:
        return StoppingPolicy("never", times)
    return StoppingPolicy("region", times, region=region, psi=psi)


def _compare_boundaries(coarse: ContinuationRegion, fine: ContinuationRegion, solution: PdeSolution) -> None:
    a = _boundary_of(coarse)
    b = _boundary_of(fine)
    if not a or not b:
        if bool(a) != bool(b):
            raise GridTooCoarse("free boundary appears only on one of the grids")
        return
    line = solution.grid.axes[-1]
    cells = np.diff(line)
    fine_levels = np.array([p[0] for p in b])
    fine_locs = np.array([p[1] for p in b])
    for level, loc in a:
        other = float(np.interp(level, fine_levels, fine_locs))
        j = int(np.clip(np.searchsorted(line, loc) - 1, 0, cells.size - 1))
        if abs(other - loc) > 2.0 * cells[j]:
            raise GridTooCoarse("free boundary moved by more than two cells under refinement",
                                level=level, coarse=loc, refined=other, cell=float(cells[j]))
