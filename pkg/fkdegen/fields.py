"""
Closed-form coefficient and data catalog.

Coefficients of a model and the data fields f, g, psi of a problem are built
from a small catalog of evaluators (constant, affine, power, payoff,
exponential, sums, products). Each evaluator is vectorised over an (n, d)
array of points, may depend on time, and supplies analytic derivatives where
they exist; everything else falls back to central differences.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Sequence, Tuple, Union

import numpy as np

from .errors import AssumptionViolation, ConfigError, EvaluationFailure


FD_STEP = 1e-4

DOMAIN_TAGS = ("interior", "gamma1", "boundary", "parabolic_gamma1", "parabolic_boundary")

TimeLike = Union[float, np.ndarray]


def as_points(x: Any) -> np.ndarray:
    """Return x as a float (n, d) array; a single point becomes n = 1."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    return arr


class Field(ABC):
    """Scalar evaluator (t, x) -> real, vectorised over rows of x."""

    time_dependent: bool = False
    smooth: bool = True

    @abstractmethod
    def evaluate(self, x: np.ndarray, t: TimeLike) -> np.ndarray:
        """Values at the rows of a 2-D array x; returns shape (n,)."""

    @abstractmethod
    def to_config(self) -> Dict[str, Any]:
        """Catalog description that field_from_config turns back into this field."""

    def __call__(self, x: Any, t: TimeLike = 0.0) -> np.ndarray:
        pts = as_points(x)
        return np.broadcast_to(np.asarray(self.evaluate(pts, t), dtype=float), (pts.shape[0],)).copy()

    @property
    def analytic_derivatives(self) -> bool:
        return False

    def gradient(self, x: Any, t: TimeLike = 0.0) -> np.ndarray:
        return self.fd_gradient(x, t)

    def hessian(self, x: Any, t: TimeLike = 0.0) -> np.ndarray:
        return self.fd_hessian(x, t)

    def fd_gradient(self, x: Any, t: TimeLike = 0.0, h: float = FD_STEP) -> np.ndarray:
        pts = as_points(x)
        n, d = pts.shape
        grad = np.empty((n, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            grad[:, i] = (self(pts + e, t) - self(pts - e, t)) / (2.0 * h)
        return grad

    def fd_hessian(self, x: Any, t: TimeLike = 0.0, h: float = FD_STEP) -> np.ndarray:
        pts = as_points(x)
        n, d = pts.shape
        hess = np.empty((n, d, d))
        centre = self(pts, t)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            hess[:, i, i] = (self(pts + ei, t) - 2.0 * centre + self(pts - ei, t)) / (h * h)
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = h
                mixed = (
                    self(pts + ei + ej, t)
                    - self(pts + ei - ej, t)
                    - self(pts - ei + ej, t)
                    + self(pts - ei - ej, t)
                ) / (4.0 * h * h)
                hess[:, i, j] = mixed
                hess[:, j, i] = mixed
        return hess

    def time_derivative(self, x: Any, t: float, h: float = FD_STEP) -> np.ndarray:
        if not self.time_dependent:
            return np.zeros(as_points(x).shape[0])
        return (self(x, t + h) - self(x, t - h)) / (2.0 * h)

    def __add__(self, other: "Field") -> "Field":
        return Sum((self, other))

    def __mul__(self, other: "Field") -> "Field":
        return Product((self, other))


def _coord(x: np.ndarray, index: int) -> np.ndarray:
    return x[:, index]


@dataclass(frozen=True)
class Constant(Field):
    value: float

    def evaluate(self, x, t):
        return np.full(x.shape[0], float(self.value))

    @property
    def analytic_derivatives(self) -> bool:
        return True

    def gradient(self, x, t=0.0):
        return np.zeros(as_points(x).shape)

    def hessian(self, x, t=0.0):
        n, d = as_points(x).shape
        return np.zeros((n, d, d))

    def to_config(self):
        return {"kind": "constant", "value": float(self.value)}


@dataclass(frozen=True)
class Affine(Field):
    """intercept + sum_i weights[i] * x_i; missing trailing weights are zero."""

    intercept: float = 0.0
    weights: Tuple[float, ...] = ()

    def _w(self, d: int) -> np.ndarray:
        w = np.zeros(d)
        k = min(d, len(self.weights))
        w[:k] = np.asarray(self.weights[:k], dtype=float)
        return w

    def evaluate(self, x, t):
        return float(self.intercept) + x @ self._w(x.shape[1])

    @property
    def analytic_derivatives(self) -> bool:
        return True

    def gradient(self, x, t=0.0):
        pts = as_points(x)
        return np.tile(self._w(pts.shape[1]), (pts.shape[0], 1))

    def hessian(self, x, t=0.0):
        n, d = as_points(x).shape
        return np.zeros((n, d, d))

    def to_config(self):
        return {"kind": "affine", "intercept": float(self.intercept), "weights": [float(w) for w in self.weights]}


@dataclass(frozen=True)
class Power(Field):
    """coef * (x_index - shift)**exponent; non-integer exponents use the positive part."""

    index: int = -1
    exponent: float = 1.0
    coef: float = 1.0
    shift: float = 0.0

    @property
    def _integer(self) -> bool:
        return float(self.exponent).is_integer() and self.exponent >= 0

    def _base(self, x: np.ndarray) -> np.ndarray:
        base = _coord(x, self.index) - self.shift
        return base if self._integer else np.maximum(base, 0.0)

    def evaluate(self, x, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef * np.power(self._base(x), self.exponent)

    @property
    def analytic_derivatives(self) -> bool:
        return True

    def gradient(self, x, t=0.0):
        pts = as_points(x)
        grad = np.zeros(pts.shape)
        p = self.exponent
        base = self._base(pts)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad[:, self.index] = 0.0 if p == 0 else self.coef * p * np.power(base, p - 1.0)
        return grad

    def hessian(self, x, t=0.0):
        pts = as_points(x)
        n, d = pts.shape
        hess = np.zeros((n, d, d))
        p = self.exponent
        base = self._base(pts)
        i = self.index % d
        with np.errstate(divide="ignore", invalid="ignore"):
            hess[:, i, i] = 0.0 if p in (0.0, 1.0) else self.coef * p * (p - 1.0) * np.power(base, p - 2.0)
        return hess

    def to_config(self):
        return {
            "kind": "power",
            "index": int(self.index),
            "exponent": float(self.exponent),
            "coef": float(self.coef),
            "shift": float(self.shift),
        }


@dataclass(frozen=True)
class Payoff(Field):
    """Put (strike - x_index)^+ or call (x_index - strike)^+, times coef."""

    index: int = 0
    strike: float = 1.0
    option: str = "put"
    coef: float = 1.0
    smooth = False

    def __post_init__(self) -> None:
        if self.option not in ("put", "call"):
            raise ConfigError(f"unknown payoff option '{self.option}'", field="option")

    def evaluate(self, x, t):
        s = _coord(x, self.index)
        if self.option == "put":
            return self.coef * np.maximum(self.strike - s, 0.0)
        return self.coef * np.maximum(s - self.strike, 0.0)

    @property
    def analytic_derivatives(self) -> bool:
        return True

    def gradient(self, x, t=0.0):
        pts = as_points(x)
        grad = np.zeros(pts.shape)
        s = _coord(pts, self.index)
        if self.option == "put":
            grad[:, self.index] = np.where(s < self.strike, -self.coef, 0.0)
        else:
            grad[:, self.index] = np.where(s > self.strike, self.coef, 0.0)
        return grad

    def hessian(self, x, t=0.0):
        n, d = as_points(x).shape
        return np.zeros((n, d, d))

    def to_config(self):
        return {"kind": "payoff", "index": int(self.index), "strike": float(self.strike),
                "option": self.option, "coef": float(self.coef)}


@dataclass(frozen=True)
class Exponential(Field):
    """coef * exp(rate * x_index)."""

    index: int = -1
    rate: float = 1.0
    coef: float = 1.0

    def evaluate(self, x, t):
        return self.coef * np.exp(self.rate * _coord(x, self.index))

    @property
    def analytic_derivatives(self) -> bool:
        return True

    def gradient(self, x, t=0.0):
        pts = as_points(x)
        grad = np.zeros(pts.shape)
        grad[:, self.index] = self.rate * self(pts, t)
        return grad

    def hessian(self, x, t=0.0):
        pts = as_points(x)
        n, d = pts.shape
        hess = np.zeros((n, d, d))
        i = self.index % d
        hess[:, i, i] = self.rate ** 2 * self(pts, t)
        return hess

    def to_config(self):
        return {"kind": "exponential", "index": int(self.index), "rate": float(self.rate), "coef": float(self.coef)}


@dataclass(frozen=True)
class TimeExponential(Field):
    """coef * exp(rate * (t - anchor)); constant in space."""

    rate: float = 0.0
    coef: float = 1.0
    anchor: float = 0.0

    time_dependent = True

    def evaluate(self, x, t):
        return self.coef * np.exp(self.rate * (np.asarray(t, dtype=float) - self.anchor)) * np.ones(x.shape[0])

    @property
    def analytic_derivatives(self) -> bool:
        return True

    def gradient(self, x, t=0.0):
        return np.zeros(as_points(x).shape)

    def hessian(self, x, t=0.0):
        n, d = as_points(x).shape
        return np.zeros((n, d, d))

    def time_derivative(self, x, t, h=FD_STEP):
        return self.rate * self(x, t)

    def to_config(self):
        return {"kind": "time_exponential", "rate": float(self.rate), "coef": float(self.coef),
                "anchor": float(self.anchor)}


@dataclass(frozen=True)
class Sum(Field):
    terms: Tuple[Field, ...] = ()

    @property
    def time_dependent(self) -> bool:  # type: ignore[override]
        return any(f.time_dependent for f in self.terms)

    @property
    def smooth(self) -> bool:  # type: ignore[override]
        return all(f.smooth for f in self.terms)

    def evaluate(self, x, t):
        total = np.zeros(x.shape[0])
        for term in self.terms:
            total = total + term(x, t)
        return total

    @property
    def analytic_derivatives(self) -> bool:
        return all(f.analytic_derivatives for f in self.terms)

    def gradient(self, x, t=0.0):
        pts = as_points(x)
        return sum((f.gradient(pts, t) for f in self.terms), np.zeros(pts.shape))

    def hessian(self, x, t=0.0):
        n, d = as_points(x).shape
        return sum((f.hessian(x, t) for f in self.terms), np.zeros((n, d, d)))

    def time_derivative(self, x, t, h=FD_STEP):
        return sum((f.time_derivative(x, t, h) for f in self.terms), np.zeros(as_points(x).shape[0]))

    def to_config(self):
        return {"kind": "sum", "terms": [f.to_config() for f in self.terms]}


@dataclass(frozen=True)
class Product(Field):
    factors: Tuple[Field, ...] = ()

    @property
    def time_dependent(self) -> bool:  # type: ignore[override]
        return any(f.time_dependent for f in self.factors)

    @property
    def smooth(self) -> bool:  # type: ignore[override]
        return all(f.smooth for f in self.factors)

    def evaluate(self, x, t):
        total = np.ones(x.shape[0])
        for factor in self.factors:
            total = total * factor(x, t)
        return total

    @property
    def analytic_derivatives(self) -> bool:
        return all(f.analytic_derivatives for f in self.factors)

    def _others(self, x, t, skip: Sequence[int]) -> np.ndarray:
        out = np.ones(x.shape[0])
        for k, factor in enumerate(self.factors):
            if k not in skip:
                out = out * factor(x, t)
        return out

    def gradient(self, x, t=0.0):
        pts = as_points(x)
        grad = np.zeros(pts.shape)
        for k, factor in enumerate(self.factors):
            grad += factor.gradient(pts, t) * self._others(pts, t, (k,))[:, None]
        return grad

    def hessian(self, x, t=0.0):
        pts = as_points(x)
        n, d = pts.shape
        hess = np.zeros((n, d, d))
        grads = [f.gradient(pts, t) for f in self.factors]
        for k, factor in enumerate(self.factors):
            hess += factor.hessian(pts, t) * self._others(pts, t, (k,))[:, None, None]
            for j in range(len(self.factors)):
                if j != k:
                    outer = grads[k][:, :, None] * grads[j][:, None, :]
                    hess += outer * self._others(pts, t, (k, j))[:, None, None]
        return hess

    def time_derivative(self, x, t, h=FD_STEP):
        pts = as_points(x)
        total = np.zeros(pts.shape[0])
        for k, factor in enumerate(self.factors):
            total += factor.time_derivative(pts, t, h) * self._others(pts, t, (k,))
        return total

    def to_config(self):
        return {"kind": "product", "factors": [f.to_config() for f in self.factors]}


@dataclass(frozen=True)
class CallableField(Field):
    """Wraps a vectorised Python callable ``func(x, t)``; library use only."""

    func: Callable[[np.ndarray, TimeLike], np.ndarray]
    name: str = "callable"
    time_dependent: bool = False
    smooth: bool = True

    def evaluate(self, x, t):
        return self.func(x, t)

    def to_config(self):
        raise ConfigError(f"field '{self.name}' is not part of the catalog and cannot be serialised")


def _build_list(items: Any, model: Any) -> Tuple[Field, ...]:
    if not isinstance(items, (list, tuple)) or not items:
        raise ConfigError("composite field needs a non-empty list", field="terms")
    return tuple(field_from_config(item, model) for item in items)


def field_from_config(spec: Any, model: Any = None) -> Field:
    """
    Build a field from its catalog description.

    Args:
        spec: A number (constant) or a dict with a "kind" key
        model: DiffusionModel used to resolve {"kind": "generator"} entries

    Returns:
        The catalog field
    """
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return Constant(float(spec))
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("field must be a number or an object with 'kind'", field=str(spec))
    kind = spec["kind"]
    try:
        if kind == "constant":
            return Constant(float(spec["value"]))
        if kind == "affine":
            return Affine(float(spec.get("intercept", 0.0)), tuple(float(w) for w in spec.get("weights", ())))
        if kind == "power":
            return Power(int(spec.get("index", -1)), float(spec.get("exponent", 1.0)),
                         float(spec.get("coef", 1.0)), float(spec.get("shift", 0.0)))
        if kind == "payoff":
            return Payoff(int(spec.get("index", 0)), float(spec["strike"]),
                          str(spec.get("option", "put")), float(spec.get("coef", 1.0)))
        if kind == "exponential":
            return Exponential(int(spec.get("index", -1)), float(spec.get("rate", 1.0)), float(spec.get("coef", 1.0)))
        if kind == "time_exponential":
            return TimeExponential(float(spec.get("rate", 0.0)), float(spec.get("coef", 1.0)),
                                   float(spec.get("anchor", 0.0)))
        if kind == "sum":
            return Sum(_build_list(spec.get("terms"), model))
        if kind == "product":
            return Product(_build_list(spec.get("factors"), model))
        if kind == "generator":
            if model is None:
                raise ConfigError("generator field needs a model", field="generator")
            from .model import GeneratorField
            return GeneratorField(model, field_from_config(spec["of"], model))
    except KeyError as exc:
        raise ConfigError(f"field of kind '{kind}' is missing '{exc.args[0]}'", field=kind) from exc
    raise ConfigError(f"unknown field kind '{kind}'", field=kind)


@dataclass(frozen=True)
class ScalarField:
    """A data field (f, g or psi) with its declared growth constant and domain tag."""

    evaluator: Field
    growth_K: float = 1.0
    domain: str = "boundary"

    def __post_init__(self) -> None:
        if self.domain not in DOMAIN_TAGS:
            raise ConfigError(f"unknown domain tag '{self.domain}'", field="domain")
        if not self.growth_K > 0:
            raise ConfigError("growth_K must be positive", field="growth_K")

    def __call__(self, x: Any, t: TimeLike = 0.0) -> np.ndarray:
        return self.evaluator(x, t)

    @property
    def smooth(self) -> bool:
        return self.evaluator.smooth

    @property
    def covers_gamma0(self) -> bool:
        """True when the field is declared on the degenerate face as well."""
        return self.domain in ("interior", "boundary", "parabolic_boundary")

    def check_growth(self, points: np.ndarray, t: TimeLike = 0.0, name: str = "field") -> float:
        """
        Check |field| <= K_field (1 + ||x||) on sample points.

        Returns:
            The worst ratio |field| / (1 + ||x||) seen on the samples
        """
        pts = as_points(points)
        values = self(pts, t)
        if not np.all(np.isfinite(values)):
            bad = pts[~np.isfinite(values)][0]
            raise EvaluationFailure(f"{name} is not finite", field=name, where=bad.tolist())
        ratio = np.abs(values) / (1.0 + np.linalg.norm(pts, axis=1))
        worst = int(np.argmax(ratio))
        if ratio[worst] > self.growth_K * (1.0 + 1e-12):
            raise AssumptionViolation(f"{name}-growth", where=pts[worst].tolist(),
                                      ratio=float(ratio[worst]), declared=self.growth_K)
        return float(ratio[worst])


def scalar_field_from_config(spec: Dict[str, Any], model: Any = None, default_domain: str = "boundary") -> ScalarField:
    """Build a ScalarField from {"field": ..., "growth_K": ..., "domain": ...} or a bare field."""
    if isinstance(spec, dict) and "field" in spec:
        return ScalarField(
            field_from_config(spec["field"], model),
            float(spec.get("growth_K", 1.0)),
            str(spec.get("domain", default_domain)),
        )
    return ScalarField(field_from_config(spec, model), 1.0, default_domain)
