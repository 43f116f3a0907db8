"""
Box domains inside the half-space and their boundary geometry.

The degenerate face Gamma0 is the part of {x_d = 0} on the closure of the box;
Gamma1 is every other finite face.
"""
from dataclasses import dataclass
from typing import Any, List, Tuple

import numpy as np

from .errors import ConfigError
from .fields import as_points


FACE_NONE = 0
FACE_GAMMA1 = 1
FACE_GAMMA0 = 2
FACE_HORIZON = 3

FACE_NAMES = {FACE_NONE: "none", FACE_GAMMA1: "gamma1", FACE_GAMMA0: "gamma0", FACE_HORIZON: "horizon"}


@dataclass(frozen=True)
class Face:
    axis: int
    value: float
    upper: bool


@dataclass(frozen=True)
class DomainSpec:
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ConfigError("domain bounds must have equal, non-zero length")
        if self.lower[-1] != 0.0:
            raise ConfigError("the lower bound of the degenerate coordinate is fixed at 0",
                              field="domain.lower", got=self.lower[-1])
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if not lo < hi:
                raise ConfigError("domain bounds must satisfy lower < upper", axis=i, lower=lo, upper=hi)

    @classmethod
    def half_space(cls, d: int) -> "DomainSpec":
        return cls(tuple([-np.inf] * (d - 1) + [0.0]), tuple([np.inf] * d))

    @classmethod
    def box(cls, lower: Any, upper: Any) -> "DomainSpec":
        return cls(tuple(float(v) for v in lower), tuple(float(v) for v in upper))

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def gamma0_nonempty(self) -> bool:
        """Gamma0 has interior whenever every leading interval is non-degenerate."""
        return all(lo < hi for lo, hi in zip(self.lower[:-1], self.upper[:-1]))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    def gamma1_faces(self) -> List[Face]:
        faces: List[Face] = []
        for i in range(self.d):
            if i != self.d - 1 and np.isfinite(self.lower[i]):
                faces.append(Face(i, float(self.lower[i]), False))
            if np.isfinite(self.upper[i]):
                faces.append(Face(i, float(self.upper[i]), True))
        return faces

    @property
    def gamma1_empty(self) -> bool:
        return not self.gamma1_faces()

    def smallest_extent(self) -> float:
        ext = self.hi - self.lo
        finite = ext[np.isfinite(ext)]
        return float(finite.min()) if finite.size else float("inf")

    def default_probe_b(self) -> float:
        """min(1, half the distance of Gamma1 in the degenerate coordinate)."""
        return float(min(1.0, 0.5 * self.upper[-1]))

    def contains(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        return np.all((pts > self.lo) & (pts < self.hi), axis=1)

    def in_closure(self, x: Any, tol: float = 0.0) -> np.ndarray:
        pts = as_points(x)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)

    def on_gamma0(self, x: Any, tol: float = 0.0) -> np.ndarray:
        pts = as_points(x)
        inside = np.all((pts[:, :-1] > self.lo[:-1]) & (pts[:, :-1] < self.hi[:-1]), axis=1)
        return inside & (pts[:, -1] <= tol)

    def on_gamma1(self, x: Any, tol: float = 0.0) -> np.ndarray:
        pts = as_points(x)
        hit = np.zeros(pts.shape[0], dtype=bool)
        for face in self.gamma1_faces():
            coord = pts[:, face.axis]
            hit |= (coord >= face.value - tol) if face.upper else (coord <= face.value + tol)
        return hit & self.in_closure(pts, tol) & (pts[:, -1] > 0.0)

    def first_gamma1_crossing(self, x_prev: np.ndarray, x_new: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Locate the first Gamma1 crossing along straight step segments.

        Args:
            x_prev: (n, d) states at the start of the step (inside the box)
            x_new: (n, d) states at the end of the step

        Returns:
            (fraction, face_index): fraction in [0, 1] of the step at which the
            first face is reached (inf when no face is crossed) and the index
            into gamma1_faces() (-1 when none)
        """
        n = x_prev.shape[0]
        frac = np.full(n, np.inf)
        which = np.full(n, -1, dtype=int)
        for k, face in enumerate(self.gamma1_faces()):
            a = x_prev[:, face.axis]
            b = x_new[:, face.axis]
            crossed = (b >= face.value) if face.upper else (b <= face.value)
            if not np.any(crossed):
                continue
            delta = b - a
            with np.errstate(divide="ignore", invalid="ignore"):
                theta = np.where(delta != 0.0, (face.value - a) / delta, 0.0)
            theta = np.clip(theta, 0.0, 1.0)
            better = crossed & (theta < frac)
            frac = np.where(better, theta, frac)
            which = np.where(better, k, which)
        return frac, which

    def project_to_face(self, points: np.ndarray, which: np.ndarray) -> np.ndarray:
        """Put exit points exactly on the face they crossed."""
        out = points.copy()
        for k, face in enumerate(self.gamma1_faces()):
            mask = which == k
            if np.any(mask):
                out[mask, face.axis] = face.value
        return out

    def truncated(self, radius: float) -> Tuple["DomainSpec", List[Face]]:
        """Replace infinite bounds by +-radius; returns the box and its far-field faces."""
        lo = self.lo.copy()
        hi = self.hi.copy()
        far: List[Face] = []
        for i in range(self.d):
            if i != self.d - 1 and not np.isfinite(lo[i]):
                lo[i] = -radius
                far.append(Face(i, -radius, False))
            if not np.isfinite(hi[i]):
                hi[i] = radius
                far.append(Face(i, radius, True))
        return DomainSpec(tuple(lo), tuple(hi)), far

    def sample_boundary(self, n_per_face: int = 16, include_gamma0: bool = True,
                        radius: float = 4.0) -> np.ndarray:
        """Points spread over Gamma1 faces (and Gamma0) of the box truncated at radius."""
        box, _ = self.truncated(radius)
        lo, hi = box.lo, box.hi
        rng = np.linspace(0.0, 1.0, n_per_face + 2)[1:-1]
        chunks = []
        faces = self.gamma1_faces()
        if include_gamma0:
            faces = faces + [Face(self.d - 1, 0.0, False)]
        for face in faces:
            pts = np.tile(0.5 * (lo + hi), (n_per_face, 1))
            for i in range(self.d):
                if i != face.axis:
                    pts[:, i] = lo[i] + rng * (hi[i] - lo[i])
            pts[:, face.axis] = face.value
            chunks.append(pts)
        return np.vstack(chunks) if chunks else np.empty((0, self.d))

    def sample_interior(self, per_axis: int = 9, radius: float = 4.0) -> np.ndarray:
        box, _ = self.truncated(radius)
        axes = [np.linspace(lo, hi, per_axis + 2)[1:-1] for lo, hi in zip(box.lo, box.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])
