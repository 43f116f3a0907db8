"""
Scale and speed integrals of the degenerate coordinate near 0.

The coordinate X^(d) solves dY = b_d(Y) dt + eta(Y) dW with
eta^2(y) = y^beta sigma0(y)^2. With q = 2 b_d / eta^2 the scale density is
s(y) = exp(-int_{y0}^y q) and the speed density is m = 1 / (eta^2 s).

Improper integrals towards 0 are evaluated on the geometric endpoints
a_k = b 2^-k. Every iterated integral is rewritten as a two-state linear
ODE in t = log(xi), integrated downward from the probe with LSODA
(stiff/non-stiff switching), so one sweep yields all partials:

    S:      dL/dt = -q xi,                dS/dt = -e^L xi
    M:      dL/dt = -q xi,                dM/dt = -e^-L xi / eta^2
    Sigma:  dH/dt = -xi/eta^2 - q xi H,   dSig/dt = -H xi      (H = M[xi,b] s(xi))
    N:      dR/dt = -xi + q xi R,         dN/dt = -R xi / eta^2 (R = S[xi,b] / s(xi))
"""
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import (
    InconsistentClassification,
    Inconclusive,
    MissingHolderData,
    OutOfRange,
    QuadratureFailure,
)
from .logging_utils import get_logger
from .model import DiffusionModel


K_MAX = 60
DIVERGENCE_THRESHOLD = 1e9
TAIL_TOL = 1e-9
STALL_RATIO = 1.0 - 1e-3
GEOMETRIC_RATIO = 0.98
RATIO_SPREAD = 0.05
OVERFLOW_CAP = 1e15
ODE_RTOL = 1e-10
ODE_ATOL = 1e-13
EQUALITY_TOL = 1e-12

INTEGRALS = ("S", "M", "Sigma", "N")
LABELS = ("Regular", "Exit", "Entrance", "NaturalAttracting", "NaturalNonAttracting")


@dataclass
class ExtendedReal:
    """Finite value with an error bound, or divergence with its evidence."""

    kind: str
    value: float
    error_bound: float = 0.0
    evidence: List[float] = field(default_factory=list)
    reason: str = ""

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "value": self.value if self.is_finite else None,
            "error_bound": self.error_bound if self.is_finite else None,
            "evidence": [v if math.isfinite(v) else None for v in self.evidence],
            "reason": self.reason,
        }


@dataclass
class BoundaryClassification:
    S0b: ExtendedReal
    M0b: Optional[ExtendedReal]
    Sigma0: Optional[ExtendedReal]
    N0: Optional[ExtendedReal]
    label: str
    scenario: str
    analytic_case: str
    probe_b: float

    @property
    def analytic_scenario(self) -> Optional[str]:
        return scenario_of_case(self.analytic_case)

    def to_dict(self) -> Dict[str, Any]:
        def dump(value: Optional[ExtendedReal]) -> Optional[Dict[str, Any]]:
            return value.to_dict() if value is not None else None

        return {
            "S": dump(self.S0b),
            "M": dump(self.M0b),
            "Sigma": dump(self.Sigma0),
            "N": dump(self.N0),
            "label": self.label,
            "scenario": self.scenario,
            "analytic_case": self.analytic_case,
            "probe_b": self.probe_b,
        }


# ---------------------------------------------------------------------------
# densities


def _q(model: DiffusionModel, y: float) -> float:
    return float(2.0 * model.b_d(y)[0] / model.eta2(y)[0])


def _inv_eta2(model: DiffusionModel, y: float) -> float:
    return float(1.0 / model.eta2(y)[0])


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0.0:
            raise OutOfRange(f"{name} must be positive", **{name: value})


def log_scale_density(model: DiffusionModel, y: float, y0: float) -> float:
    """log s(y) = -int_{y0}^{y} q(x) dx, integrated in u = log x."""
    _check_positive(y=y, y0=y0)
    if y == y0:
        return 0.0
    integrand = lambda u: _q(model, math.exp(u)) * math.exp(u)
    result = quad(integrand, math.log(y0), math.log(y), epsabs=0.0, epsrel=1e-12, limit=200, full_output=1)
    value, abserr = result[0], result[1]
    if len(result) > 3 or not math.isfinite(value) or abserr > 1e-9 * max(1.0, abs(value)):
        raise QuadratureFailure("scale-density quadrature did not reach tolerance", y=y, y0=y0, abserr=abserr)
    return -value


def scale_density(model: DiffusionModel, y: float, y0: float) -> float:
    """
    Scale density s(y) normalised so that s(y0) = 1.

    Args:
        model: Diffusion model
        y: Evaluation point > 0
        y0: Normalisation point > 0

    Returns:
        s(y)
    """
    return math.exp(log_scale_density(model, y, y0))


def speed_density(model: DiffusionModel, y: float, y0: float) -> float:
    """Speed density m(y) = 1 / (eta^2(y) s(y))."""
    log_s = log_scale_density(model, y, y0)
    return math.exp(-log_s) * _inv_eta2(model, y)


# ---------------------------------------------------------------------------
# backward sweeps


def _rhs(model: DiffusionModel, which: str) -> Callable[[float, np.ndarray], List[float]]:
    if which == "S":
        def rhs(t, z):
            xi = math.exp(t)
            return [-_q(model, xi) * xi, -math.exp(min(z[0], 700.0)) * xi]
    elif which == "M":
        def rhs(t, z):
            xi = math.exp(t)
            return [-_q(model, xi) * xi, -math.exp(min(-z[0], 700.0)) * xi * _inv_eta2(model, xi)]
    elif which == "Sigma":
        def rhs(t, z):
            xi = math.exp(t)
            inv = _inv_eta2(model, xi)
            return [-xi * inv - _q(model, xi) * xi * z[0], -z[0] * xi]
    elif which == "N":
        def rhs(t, z):
            xi = math.exp(t)
            return [-xi + _q(model, xi) * xi * z[0], -z[0] * xi * _inv_eta2(model, xi)]
    else:
        raise ValueError(f"unknown integral '{which}'")
    return rhs


def _sweep(model: DiffusionModel, which: str, top: float, bottoms: Sequence[float]) -> np.ndarray:
    """
    Integrals from each bottom up to top for one of S, M, Sigma, N (anchored at top).

    Values past the overflow cap are returned as +inf.
    """
    bottoms = np.asarray(bottoms, dtype=float)
    out = np.zeros(bottoms.size)
    order = np.argsort(-bottoms)
    t_top = math.log(top)
    t_eval = np.log(bottoms[order])
    mask = t_eval < t_top
    if not np.any(mask):
        return out
    t_eval_active = t_eval[mask]

    def capped(t, z):
        return OVERFLOW_CAP - z[1]

    capped.terminal = True

    sol = solve_ivp(_rhs(model, which), (t_top, float(t_eval_active[-1])), [0.0, 0.0], method="LSODA",
                    t_eval=t_eval_active, rtol=ODE_RTOL, atol=ODE_ATOL, events=capped)
    if sol.status == -1:
        raise QuadratureFailure(f"{which} sweep failed: {sol.message}", integral=which, top=top)
    values = np.full(t_eval_active.size, np.inf)
    got = sol.y[1] if sol.y.size else np.empty(0)
    values[: got.size] = got
    values[values >= OVERFLOW_CAP] = np.inf
    sorted_vals = np.zeros(bottoms.size)
    sorted_vals[mask] = values
    out[order] = sorted_vals
    return out


def _judge(partials: np.ndarray) -> Optional[ExtendedReal]:
    """Apply the finite/divergent criteria to partials for k = 1, 2, ..."""
    tails: List[float] = []
    evidence: List[float] = []
    prev = 0.0
    for k, value in enumerate(partials, start=1):
        evidence.append(float(value))
        if not math.isfinite(value):
            return ExtendedReal("divergent", math.inf, evidence=evidence, reason="overflow")
        tails.append(value - prev)
        prev = value
        if k >= 4:
            last = evidence[-4:]
            if value > DIVERGENCE_THRESHOLD and all(b >= a for a, b in zip(last[:-1], last[1:])):
                return ExtendedReal("divergent", math.inf, evidence=evidence, reason="threshold")
        if k >= 2 and abs(tails[-1]) < TAIL_TOL and abs(tails[-2]) < TAIL_TOL:
            return ExtendedReal("finite", float(value), abs(tails[-1]), evidence, reason="tail")
        if k >= 6:
            recent = tails[-5:]
            if all(t > 0.0 for t in recent):
                ratios = [b / a for a, b in zip(recent[:-1], recent[1:])]
                if all(r >= STALL_RATIO for r in ratios):
                    return ExtendedReal("divergent", math.inf, evidence=evidence, reason="non-decaying tails")
                if max(ratios) <= GEOMETRIC_RATIO and max(ratios) - min(ratios) <= RATIO_SPREAD:
                    r = max(ratios)
                    remainder = tails[-1] * r / (1.0 - r)
                    return ExtendedReal("finite", float(value + remainder), float(remainder), evidence,
                                        reason="geometric tails")
    return None


def limit_integral(which: str, model: DiffusionModel, probe_b: float, k_max: int = K_MAX) -> ExtendedReal:
    """
    Evaluate S(0,b], M(0,b], Sigma(0,b) or N(0,b) by geometric endpoint refinement.

    Args:
        which: One of "S", "M", "Sigma", "N"
        model: Diffusion model
        probe_b: Right endpoint b > 0
        k_max: Number of refinements a_k = b 2^-k

    Returns:
        ExtendedReal verdict with the partial sequence as evidence
    """
    if which not in INTEGRALS:
        raise ValueError(f"unknown integral '{which}'")
    _check_positive(probe_b=probe_b)
    endpoints = probe_b * np.power(2.0, -np.arange(1, k_max + 1, dtype=float))
    partials = _sweep(model, which, probe_b, endpoints)
    verdict = _judge(partials)
    if verdict is None:
        raise Inconclusive(f"{which}(0, b] is inconclusive after {k_max} refinements",
                           integral=which, probe_b=probe_b, evidence=[float(v) for v in partials])
    return verdict


# ---------------------------------------------------------------------------
# classification


def scenario_of_case(case: str) -> Optional[str]:
    if case in ("a", "b", "c"):
        return "A"
    if case in ("d", "e"):
        return "B"
    return None


def scenario_of_label(label: str) -> str:
    return "B" if label in ("Regular", "Exit") else "A"


def classify_analytic(model: DiffusionModel) -> str:
    """
    Analytic case of the origin from beta and 2 b_d(0) versus sigma0(0)^2.

    Returns:
        "a" (beta in (1, 2]), "b"/"c"/"e" (beta = 1), "d" (beta in (0, 1)) or
        "unmatched" (beta = 1 at equality without local constancy of sigma0)
    """
    beta = model.beta
    bd0 = float(model.b_d(0.0)[0])
    if 0.0 < beta < 1.0:
        return "d"
    needs_holder = bd0 > 0.0 and model.holder is None
    if abs(beta - 1.0) <= EQUALITY_TOL:
        if needs_holder:
            raise MissingHolderData("b_d(0) > 0 with beta = 1 needs Hoelder data of b_d at 0", beta=beta, bd0=bd0)
        s0 = float(model.sigma0_at(0.0)[0])
        diff = 2.0 * bd0 - s0 * s0
        if abs(diff) <= EQUALITY_TOL:
            return "c" if model.sigma0_locally_constant else "unmatched"
        return "b" if diff > 0.0 else "e"
    if 1.0 < beta <= 2.0:
        if needs_holder:
            raise MissingHolderData("b_d(0) > 0 with beta in (1, 2] needs Hoelder data of b_d at 0", beta=beta, bd0=bd0)
        return "a"
    return "unmatched"


def _label(S: ExtendedReal, M: Optional[ExtendedReal], Sigma: Optional[ExtendedReal],
           N: Optional[ExtendedReal]) -> str:
    if not S.is_finite:
        assert N is not None
        return "Entrance" if N.is_finite else "NaturalNonAttracting"
    assert M is not None
    if M.is_finite:
        return "Regular"
    assert Sigma is not None
    return "Exit" if Sigma.is_finite else "NaturalAttracting"


def classify_origin(model: DiffusionModel, probe_b: float = 1.0, check_implications: bool = False) -> BoundaryClassification:
    """
    Classify the origin for the degenerate coordinate.

    Args:
        model: Validated model
        probe_b: Right endpoint of the integrals
        check_implications: Also compute the integrals the decision graph skips and
            verify S = inf => Sigma = inf and (S, M finite) => (Sigma, N finite)

    Returns:
        BoundaryClassification with label, scenario and analytic case
    """
    logger = get_logger()
    S = limit_integral("S", model, probe_b)
    M = Sigma = N = None
    if S.is_finite:
        M = limit_integral("M", model, probe_b)
        if M.is_finite or check_implications:
            Sigma = limit_integral("Sigma", model, probe_b)
        if M.is_finite or check_implications:
            N = limit_integral("N", model, probe_b)
        if M.is_finite and Sigma is not None and N is not None and not (Sigma.is_finite and N.is_finite):
            raise InconsistentClassification("S and M are finite but Sigma or N diverges", probe_b=probe_b)
        if not M.is_finite and Sigma is None:
            Sigma = limit_integral("Sigma", model, probe_b)
    else:
        N = limit_integral("N", model, probe_b)
        if check_implications:
            M = limit_integral("M", model, probe_b)
            Sigma = limit_integral("Sigma", model, probe_b)
            if Sigma.is_finite:
                raise InconsistentClassification("S diverges but Sigma is finite", probe_b=probe_b)
    label = _label(S, M, Sigma, N)
    case = classify_analytic(model)
    result = BoundaryClassification(S, M, Sigma, N, label, scenario_of_label(label), case, probe_b)
    logger.debug("origin classified", extra={"label": label, "scenario": result.scenario})
    return result


# ---------------------------------------------------------------------------
# hitting probabilities and exit times


def _interval(a: float, y: float, b: float) -> None:
    if not (0.0 <= a <= y <= b and a < b):
        raise OutOfRange("need 0 <= a <= y <= b with a < b", a=a, y=y, b=b)


def hitting_prob(model: DiffusionModel, a: float, y: float, b: float) -> float:
    """
    Probability that the coordinate started at y reaches b before a.

    Args:
        model: Diffusion model
        a: Lower level (0 allowed when S(0, b] is finite)
        y: Start level
        b: Upper level

    Returns:
        w_{a,b}(y) = S[a, y] / S[a, b]
    """
    _interval(a, y, b)
    if y == a:
        return 0.0
    if y == b:
        return 1.0
    if a == 0.0:
        total = limit_integral("S", model, b)
        if not total.is_finite:
            raise OutOfRange("a = 0 needs a finite S(0, b]", b=b)
        upper = float(_sweep(model, "S", b, [y])[0])
        return float(min(1.0, max(0.0, (total.value - upper) / total.value)))
    s_yb, s_ab = _sweep(model, "S", b, [y, a])
    if not (math.isfinite(s_ab) and s_ab > 0.0):
        raise QuadratureFailure("S[a, b] is not a positive finite number", a=a, b=b)
    return float(min(1.0, max(0.0, (s_ab - s_yb) / s_ab)))


def expected_exit_time(model: DiffusionModel, a: float, y: float, b: float) -> float:
    """
    Mean exit time of (a, b) from y.

    v = 2 (w int_y^b S[xi, b] M(dxi) + (1 - w) int_a^y S[a, xi] M(dxi))
    """
    _interval(a, y, b)
    if y == a or y == b:
        return 0.0
    w = hitting_prob(model, a, y, b)
    upper = float(_sweep(model, "N", b, [y])[0])
    if a == 0.0:
        lower_part = limit_integral("Sigma", model, y)
        if not lower_part.is_finite:
            raise OutOfRange("a = 0 needs a finite Sigma(0, y)", y=y)
        lower = lower_part.value
    else:
        lower = float(_sweep(model, "Sigma", y, [a])[0])
    if not (math.isfinite(upper) and math.isfinite(lower)):
        raise QuadratureFailure("exit-time integrals overflowed", a=a, y=y, b=b)
    return float(max(0.0, 2.0 * (w * upper + (1.0 - w) * lower)))
