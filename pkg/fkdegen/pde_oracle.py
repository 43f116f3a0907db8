"""
Finite-difference oracle for the elliptic and parabolic problems.

Grids are tensor products: uniform on the leading axes, geometrically graded
toward x_d = 0 on the degenerate axis. The discrete generator is assembled
as a monotone matrix (central differences where they keep the sign pattern,
upwinding elsewhere, a positive seven-point stencil with artificial
diffusion for mixed derivatives). Rows on the degenerate face either carry
the degenerate equation (partial boundary mode) or Dirichlet data (full mode).
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, bicgstab, splu, spsolve

from .domain import DomainSpec, Face
from .errors import CompatibilityError, ConfigError, MaxIterations, NonMonotoneStencil, SolverDiverged
from .fk_estimate import scenario_for
from .logging_utils import get_logger
from .metrics import record_solver
from .model import DiffusionModel


NODE_INTERIOR = 0
NODE_GAMMA1 = 1
NODE_GAMMA0 = 2
NODE_FARFIELD = 3

NODE_NAMES = {NODE_INTERIOR: "interior", NODE_GAMMA1: "gamma1", NODE_GAMMA0: "gamma0", NODE_FARFIELD: "farfield"}

MONOTONE_TOL = 1e-12
FALLBACK_RESIDUAL = 1e-6
PSOR_CHECK_EVERY = 10
POLICY_MAXITER = 200


class OracleConfig(BaseModel):
    """Grid and solver controls of the finite-difference oracle."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    points_per_axis: int = PydanticField(41, ge=3)
    first_cell_fraction: float = PydanticField(1e-3, gt=0, le=0.5)
    grading_ratio: float = PydanticField(1.1, ge=1.0, le=1.2)
    farfield_radius: float = PydanticField(4.0, gt=0)
    tol: float = PydanticField(1e-10, gt=0)
    maxiter: int = PydanticField(100000, ge=1)
    omega: float = PydanticField(1.5, gt=0, lt=2)
    obstacle_method: str = PydanticField("psor", pattern="^(psor|policy)$")
    obstacle_tol: float = PydanticField(1e-8, gt=0)
    time_steps: int = PydanticField(100, ge=1)
    theta: float = PydanticField(0.5, ge=0.5, le=1.0)
    # None: implicit start-up only for non-smooth terminal data
    rannacher: Optional[bool] = None


# ---------------------------------------------------------------------------
# grid


def graded_axis(extent: float, n: int, first_fraction: float, ratio: float) -> np.ndarray:
    """Nodes on [0, extent] whose cells grow by ratio from a first cell of at most first_fraction * extent."""
    if n < 2:
        raise ConfigError("an axis needs at least two nodes", n=n)
    if ratio == 1.0:
        return np.linspace(0.0, extent, n)
    target = extent / (n - 1)
    h = min(first_fraction * extent, target)
    cells: List[float] = []
    total = 0.0
    while total < extent * (1.0 - 1e-12):
        cells.append(h)
        total += h
        h = min(h * ratio, target)
    nodes = np.concatenate([[0.0], np.cumsum(np.asarray(cells) * (extent / total))])
    nodes[-1] = extent
    return nodes


def _node_codes(domain: DomainSpec, far: Tuple[Face, ...], axes: Tuple[np.ndarray, ...]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    codes = np.full(mesh[0].shape, NODE_INTERIOR, dtype=np.int8)
    codes[mesh[-1] == 0.0] = NODE_GAMMA0
    for face in far:
        codes[mesh[face.axis] == face.value] = NODE_FARFIELD
    for face in domain.gamma1_faces():
        codes[mesh[face.axis] == face.value] = NODE_GAMMA1
    return codes


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    radius: float
    axes: Tuple[np.ndarray, ...]
    far: Tuple[Face, ...]
    codes: np.ndarray

    @classmethod
    def build(cls, domain: DomainSpec, points_per_axis: int = 41, first_cell_fraction: float = 1e-3,
              grading_ratio: float = 1.1, radius: float = 4.0) -> "Grid":
        box, _ = domain.truncated(radius)
        axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(box.lo[:-1], box.hi[:-1])]
        axes.append(graded_axis(float(box.hi[-1]), points_per_axis, first_cell_fraction, grading_ratio))
        return cls.from_axes(domain, axes, radius)

    @classmethod
    def for_config(cls, domain: DomainSpec, config: OracleConfig) -> "Grid":
        return cls.build(domain, config.points_per_axis, config.first_cell_fraction, config.grading_ratio,
                         config.farfield_radius)

    @classmethod
    def from_axes(cls, domain: DomainSpec, axes: Any, radius: float) -> "Grid":
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        if len(axes) != domain.d:
            raise ConfigError("one axis per dimension is required", d=domain.d, got=len(axes))
        for k, ax in enumerate(axes):
            if ax.size < 3 or np.any(np.diff(ax) <= 0.0):
                raise ConfigError("grid axes need at least three strictly increasing nodes", axis=k)
        if axes[-1][0] != 0.0:
            raise ConfigError("the degenerate axis must start at 0")
        _, far = domain.truncated(radius)
        return cls(domain, radius, axes, tuple(far), _node_codes(domain, tuple(far), axes))

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(ax.size for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def refine(self) -> "Grid":
        """Insert the midpoint of every cell on every axis."""
        fine = []
        for ax in self.axes:
            mid = 0.5 * (ax[:-1] + ax[1:])
            out = np.empty(2 * ax.size - 1)
            out[0::2] = ax
            out[1::2] = mid
            fine.append(out)
        return Grid.from_axes(self.domain, fine, self.radius)

    def grading(self) -> float:
        """Largest ratio of neighbouring cells on the degenerate axis."""
        cells = np.diff(self.axes[-1])
        ratios = cells[1:] / cells[:-1]
        return float(np.max(np.maximum(ratios, 1.0 / ratios))) if ratios.size else 1.0


# ---------------------------------------------------------------------------
# assembly


@dataclass(eq=False)
class DiscreteOperator:
    """
    Sparse discrete generator. Equation rows hold A; Dirichlet rows are identity rows.
    """

    grid: Grid
    matrix: sparse.csr_matrix
    equation: np.ndarray
    boundary_mode: str
    points: np.ndarray

    def load(self, f: Any, g: Any, t: float = 0.0) -> np.ndarray:
        """Right-hand side: f on equation rows, g on Dirichlet rows."""
        rhs = np.empty(self.grid.size)
        eq = self.equation
        if np.any(eq):
            rhs[eq] = f(self.points[eq], t)
        if np.any(~eq):
            rhs[~eq] = g(self.points[~eq], t)
        return rhs

    def equation_part(self) -> sparse.csr_matrix:
        """A with its Dirichlet rows zeroed."""
        return sparse.diags(self.equation.astype(float)) @ self.matrix


def discretize(model: DiffusionModel, grid: Grid, boundary_mode: str = "partial") -> DiscreteOperator:
    """
    Assemble the monotone discrete generator on a grid.

    Args:
        model: Diffusion model
        grid: Tensor grid of the truncated box
        boundary_mode: "partial" assembles the degenerate equation on Gamma0,
            "full" makes Gamma0 rows Dirichlet rows

    Returns:
        DiscreteOperator

    Raises:
        NonMonotoneStencil: when a positive off-diagonal survives the safeguards
    """
    if boundary_mode not in ("partial", "full"):
        raise ConfigError(f"unknown boundary mode '{boundary_mode}'")
    if grid.d != model.d:
        raise ConfigError("grid and model dimensions differ", grid=grid.d, model=model.d)
    d = grid.d
    shape = grid.shape
    N = grid.size
    strides = np.array([int(np.prod(shape[k + 1 :])) for k in range(d)], dtype=np.int64)
    pts = grid.points()
    codes = grid.codes.ravel()
    on0 = codes == NODE_GAMMA0
    equation = (codes == NODE_INTERIOR) | (on0 & (boundary_mode == "partial"))
    rows = np.nonzero(equation)[0]
    n = rows.size
    multi = np.column_stack(np.unravel_index(rows, shape)) if n else np.zeros((0, d), dtype=int)
    P = pts[rows]
    a = model.a(P) if n else np.zeros((0, d, d))
    b = model.b(P) if n else np.zeros((0, d))
    c = model.c(P) if n else np.zeros(0)
    is0 = on0[rows]
    inner = ~is0

    hm = np.empty((n, d))
    hp = np.empty((n, d))
    for k, ax in enumerate(grid.axes):
        i = multi[:, k]
        hp[:, k] = ax[np.minimum(i + 1, ax.size - 1)] - ax[i]
        lower = ax[i] - ax[np.maximum(i - 1, 0)]
        hm[:, k] = np.where(i > 0, lower, hp[:, k])

    R: List[np.ndarray] = []
    C: List[np.ndarray] = []
    V: List[np.ndarray] = []
    diag = np.zeros(n)

    def put(sel: np.ndarray, shift: Dict[int, int], values: np.ndarray) -> None:
        if not np.any(sel):
            return
        offset = sum(s * strides[k] for k, s in shift.items())
        R.append(rows[sel])
        C.append(rows[sel] + offset)
        V.append(values[sel])

    hmin = np.minimum(hm, hp)
    for k in range(d):
        need = np.zeros(n)
        for l in range(d):
            if l != k:
                need += np.abs(a[:, k, l]) * (hm[:, k] + hp[:, k]) / (2.0 * hmin[:, l])
        a_eff = np.where(inner, np.maximum(a[:, k, k], need), 0.0)
        surplus = a_eff - need
        span = hm[:, k] + hp[:, k]
        wp = a_eff / (hp[:, k] * span)
        wm = a_eff / (hm[:, k] * span)
        put(inner, {k: 1}, -wp)
        put(inner, {k: -1}, -wm)
        diag += np.where(inner, wp + wm, 0.0)

        bk = b[:, k]
        only_forward = is0 & (k == d - 1)
        central = inner & (surplus >= np.maximum(-bk * hm[:, k], bk * hp[:, k]))
        cp = -bk * hm[:, k] / (hp[:, k] * span)
        cm = bk * hp[:, k] / (hm[:, k] * span)
        put(central, {k: 1}, cp)
        put(central, {k: -1}, cm)
        diag += np.where(central, -(cp + cm), 0.0)
        forward = (~central) & ((bk > 0.0) | only_forward)
        backward = (~central) & (bk < 0.0) & ~only_forward
        put(forward, {k: 1}, -bk / hp[:, k])
        diag += np.where(forward, bk / hp[:, k], 0.0)
        put(backward, {k: -1}, bk / hm[:, k])
        diag += np.where(backward, -bk / hm[:, k], 0.0)

    for k in range(d):
        for l in range(k + 1, d):
            akl = np.where(inner, a[:, k, l], 0.0)
            pos = akl > 0.0
            neg = akl < 0.0
            A = np.abs(akl)
            s1 = A / (2.0 * hp[:, k] * hp[:, l])
            s2 = A / (2.0 * hm[:, k] * hm[:, l])
            put(pos, {k: 1, l: 1}, -s1)
            put(pos, {k: -1, l: -1}, -s2)
            put(pos, {k: 1}, s1)
            put(pos, {l: 1}, s1)
            put(pos, {k: -1}, s2)
            put(pos, {l: -1}, s2)
            diag += np.where(pos, -(s1 + s2), 0.0)
            t1 = A / (2.0 * hp[:, k] * hm[:, l])
            t2 = A / (2.0 * hm[:, k] * hp[:, l])
            put(neg, {k: 1, l: -1}, -t1)
            put(neg, {k: -1, l: 1}, -t2)
            put(neg, {k: 1}, t1)
            put(neg, {l: -1}, t1)
            put(neg, {l: 1}, t2)
            put(neg, {k: -1}, t2)
            diag += np.where(neg, -(t1 + t2), 0.0)

    diag += c
    dirichlet = np.nonzero(~equation)[0]
    R.extend([rows, dirichlet])
    C.extend([rows, dirichlet])
    V.extend([diag, np.ones(dirichlet.size)])
    matrix = sparse.coo_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))), shape=(N, N)).tocsr()
    matrix.sum_duplicates()
    _check_monotone(matrix, pts)
    return DiscreteOperator(grid, matrix, equation, boundary_mode, pts)


def _check_monotone(matrix: sparse.csr_matrix, pts: np.ndarray) -> None:
    coo = matrix.tocoo()
    scale = np.maximum(1.0, np.abs(matrix.diagonal()))[coo.row]
    bad = (coo.row != coo.col) & (coo.data > MONOTONE_TOL * scale)
    if np.any(bad):
        k = int(np.argmax(np.where(bad, coo.data / scale, -np.inf)))
        raise NonMonotoneStencil("positive off-diagonal entry in the discrete generator",
                                 node=pts[coo.row[k]].tolist(), neighbour=pts[coo.col[k]].tolist(),
                                 value=float(coo.data[k]))


# ---------------------------------------------------------------------------
# solution container


@dataclass(eq=False)
class PdeSolution:
    grid: Grid
    values: np.ndarray
    residual: float
    iterations: int
    method: str
    boundary_mode: str
    times: Optional[np.ndarray] = None
    complementarity_residual: Optional[float] = None
    active_set: Optional[np.ndarray] = None
    startup: bool = False
    _interp: Any = field(default=None, repr=False)

    @property
    def parabolic(self) -> bool:
        return self.times is not None

    def initial_slice(self) -> np.ndarray:
        return self.values[0] if self.parabolic else self.values

    def value_at(self, x: Any, t: Optional[float] = None) -> np.ndarray:
        """Multilinear interpolation of the solution at points x (and time t)."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if self._interp is None:
            axes = ((self.times,) if self.parabolic else ()) + self.grid.axes
            self._interp = RegularGridInterpolator(axes, self.values, method="linear")
        if self.parabolic:
            stamp = np.full((pts.shape[0], 1), 0.0 if t is None else float(t))
            pts = np.hstack([stamp, pts])
        return self._interp(pts)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
            "boundary_mode": self.boundary_mode,
            "grid_shape": list(self.grid.shape),
            "grading_ratio": self.grid.grading(),
        }
        if self.parabolic:
            out["time_steps"] = int(self.times.size - 1)
            out["startup"] = self.startup
        if self.complementarity_residual is not None:
            out["complementarity_residual"] = self.complementarity_residual
            out["active_fraction"] = float(np.mean(self.active_set))
        return out


# ---------------------------------------------------------------------------
# linear solves


def _jacobi(matrix: sparse.csr_matrix) -> LinearOperator:
    inv = 1.0 / matrix.diagonal()
    return LinearOperator(matrix.shape, matvec=lambda v: inv * np.ravel(v), dtype=float)


def _relative_residual(matrix: sparse.spmatrix, u: np.ndarray, rhs: np.ndarray) -> float:
    return float(np.linalg.norm(matrix @ u - rhs) / max(np.linalg.norm(rhs), 1e-300))


def linear_solve(matrix: sparse.csr_matrix, rhs: np.ndarray, tol: float = 1e-10, maxiter: int = 100000,
                 x0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int, float]:
    """
    BiCGSTAB with a Jacobi preconditioner, falling back to a sparse direct solve.

    Returns:
        (solution, iterations, relative residual)
    """
    count = [0]

    def tick(_: np.ndarray) -> None:
        count[0] += 1

    u, info = bicgstab(matrix, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=_jacobi(matrix), callback=tick)
    residual = _relative_residual(matrix, u, rhs) if np.all(np.isfinite(u)) else np.inf
    if info != 0 or residual > max(10.0 * tol, 1e-14):
        get_logger().warning("iterative solve did not converge, using a direct solve",
                             extra={"iterations": count[0], "residual": residual})
        u = spsolve(matrix.tocsc(), rhs)
        residual = _relative_residual(matrix, u, rhs) if np.all(np.isfinite(u)) else np.inf
        if not residual <= FALLBACK_RESIDUAL:
            raise SolverDiverged("linear solve failed", residual=residual, info=int(info))
    record_solver("bicgstab", count[0])
    return u, count[0], residual


def _complementarity(matrix: sparse.spmatrix, u: np.ndarray, rhs: np.ndarray, psi: np.ndarray,
                     eq: np.ndarray) -> float:
    r = matrix @ u - rhs
    gap = np.minimum(r, u - psi)
    return float(np.max(np.abs(gap[eq]))) if np.any(eq) else 0.0


def psor(matrix: sparse.csr_matrix, rhs: np.ndarray, psi: np.ndarray, u0: np.ndarray, eq: np.ndarray,
         omega: float = 1.5, tol: float = 1e-8, maxiter: int = 100000) -> Tuple[np.ndarray, int, float]:
    """
    Projected SOR for min(A u - F, u - psi) = 0 on equation rows.

    Returns:
        (solution, sweeps, complementarity residual)
    """
    indptr, indices, data = matrix.indptr, matrix.indices, matrix.data
    diag = matrix.diagonal()
    u = np.array(u0, dtype=float)
    u[~eq] = rhs[~eq]
    rows = np.nonzero(eq)[0]
    slices = [(int(i), int(indptr[i]), int(indptr[i + 1])) for i in rows]
    residual = _complementarity(matrix, u, rhs, psi, eq)
    sweeps = 0
    while residual > tol:
        if sweeps >= maxiter:
            record_solver("psor", sweeps)
            raise MaxIterations("projected SOR hit its iteration cap", sweeps=sweeps, residual=residual)
        for _ in range(PSOR_CHECK_EVERY):
            for i, start, end in slices:
                cols = indices[start:end]
                off = rhs[i] - np.dot(data[start:end], u[cols]) + diag[i] * u[i]
                u[i] = max(psi[i], (1.0 - omega) * u[i] + omega * off / diag[i])
            sweeps += 1
        residual = _complementarity(matrix, u, rhs, psi, eq)
        if not np.isfinite(residual):
            raise SolverDiverged("projected SOR produced non-finite values", sweeps=sweeps)
    record_solver("psor", sweeps)
    return u, sweeps, residual


def policy_iteration(matrix: sparse.csr_matrix, rhs: np.ndarray, psi: np.ndarray, u0: np.ndarray,
                     eq: np.ndarray, tol: float = 1e-8, maxiter: int = POLICY_MAXITER) -> Tuple[np.ndarray, int, float]:
    """
    Howard iteration: each equation row takes whichever of A u = F and u = psi is smaller.
    """
    u = np.array(u0, dtype=float)
    previous: Optional[np.ndarray] = None
    eye = sparse.identity(matrix.shape[0], format="csr")
    for it in range(1, maxiter + 1):
        active = eq & (u - psi < matrix @ u - rhs)
        if previous is not None and np.array_equal(active, previous):
            residual = _complementarity(matrix, u, rhs, psi, eq)
            record_solver("policy", it - 1)
            return u, it - 1, residual
        free = (~active).astype(float)
        system = (sparse.diags(free) @ matrix + sparse.diags(active.astype(float)) @ eye).tocsc()
        u = spsolve(system, np.where(active, psi, rhs))
        if not np.all(np.isfinite(u)):
            raise SolverDiverged("policy iteration produced non-finite values", iteration=it)
        previous = active
        residual = _complementarity(matrix, u, rhs, psi, eq)
        if residual <= tol:
            record_solver("policy", it)
            return u, it, residual
    raise MaxIterations("policy iteration did not settle", iterations=maxiter)


def _projected(method: str, matrix, rhs, psi, u0, eq, config: OracleConfig) -> Tuple[np.ndarray, int, float]:
    if method == "policy":
        return policy_iteration(matrix, rhs, psi, u0, eq, config.obstacle_tol)
    return psor(matrix, rhs, psi, u0, eq, config.omega, config.obstacle_tol, config.maxiter)


# ---------------------------------------------------------------------------
# problem solvers


def _mode(spec: Any, model: DiffusionModel, domain: DomainSpec, scenario: Optional[str]) -> Any:
    if spec.boundary_mode is not None:
        return spec
    return spec.resolve(model, domain, scenario or scenario_for(model, domain))


def _grid(domain: DomainSpec, grid: Optional[Grid], config: OracleConfig) -> Grid:
    return grid if grid is not None else Grid.for_config(domain, config)


def solve_elliptic(model: DiffusionModel, domain: DomainSpec, spec: Any, grid: Optional[Grid] = None,
                   tol: Optional[float] = None, config: Optional[OracleConfig] = None,
                   scenario: Optional[str] = None) -> PdeSolution:
    """
    Solve A u = f with Dirichlet data on the faces the boundary mode demands.

    Args:
        model: Diffusion model
        domain: Box domain
        spec: Elliptic ProblemSpec
        grid: Grid (built from config when omitted)
        tol: Relative residual target of the linear solve
        config: Oracle controls
        scenario: Scenario of the origin, used when spec has no boundary mode yet

    Returns:
        PdeSolution with nodal values
    """
    config = config or OracleConfig()
    spec = _mode(spec, model, domain, scenario)
    grid = _grid(domain, grid, config)
    op = discretize(model, grid, spec.boundary_mode)
    rhs = op.load(spec.f, spec.g, 0.0)
    u, iterations, residual = linear_solve(op.matrix, rhs, tol or config.tol, config.maxiter)
    return PdeSolution(grid, u.reshape(grid.shape), residual, iterations, "bicgstab", spec.boundary_mode)


def _theta_system(op: DiscreteOperator, dt: float, theta: float) -> sparse.csc_matrix:
    eye = sparse.identity(op.grid.size, format="csr")
    return (eye + theta * dt * op.equation_part()).tocsc()


def _needs_startup(spec: Any, config: OracleConfig, obstacle: bool) -> bool:
    if config.rannacher is not None:
        return config.rannacher
    return not (spec.g.smooth and (not obstacle or spec.psi.smooth))


def _march(model: DiffusionModel, spec: Any, grid: Grid, config: OracleConfig,
           time_steps: int, theta: float, obstacle: bool) -> PdeSolution:
    op = discretize(model, grid, spec.boundary_mode)
    T = float(spec.T)
    times = np.linspace(0.0, T, time_steps + 1)
    pts = op.points
    eq = op.equation
    E = op.equation_part()
    values = np.empty((time_steps + 1, grid.size))
    u = spec.g(pts, T)
    if obstacle:
        u = np.maximum(u, np.where(eq, spec.psi(pts, T), -np.inf))
    values[-1] = u

    dt = T / time_steps
    lu_cache: Dict[Tuple[float, float], Any] = {}

    def system(step: float, th: float) -> Tuple[sparse.csr_matrix, Any]:
        key = (step, th)
        if key not in lu_cache:
            lhs = _theta_system(op, step, th)
            lu_cache[key] = (lhs.tocsr(), None if obstacle else splu(lhs))
        return lu_cache[key]

    def advance(u_next: np.ndarray, t_next: float, step: float, th: float) -> Tuple[np.ndarray, int, float]:
        t_now = max(t_next - step, 0.0)
        f_next = spec.f(pts, t_next)
        f_now = spec.f(pts, t_now)
        rhs = u_next - (1.0 - th) * step * (E @ u_next - np.where(eq, f_next, 0.0)) + th * step * np.where(eq, f_now, 0.0)
        rhs = np.where(eq, rhs, spec.g(pts, t_now))
        lhs, lu = system(step, th)
        if not obstacle:
            u_now = lu.solve(rhs)
            return u_now, 1, _relative_residual(lhs, u_now, rhs)
        psi = np.where(eq, spec.psi(pts, t_now), -np.inf)
        start = np.maximum(u_next, psi)
        return _projected(config.obstacle_method, lhs, rhs, psi, start, eq, config)

    iterations = 0
    worst = 0.0
    startup = theta == 0.5 and _needs_startup(spec, config, obstacle)
    for n in range(time_steps - 1, -1, -1):
        t_next, t_now = times[n + 1], times[n]
        if startup and n == time_steps - 1:
            u, its1, r1 = advance(u, t_next, 0.5 * dt, 1.0)
            u, its2, r2 = advance(u, t_next - 0.5 * dt, 0.5 * dt, 1.0)
            its, r = its1 + its2, max(r1, r2)
        else:
            u, its, r = advance(u, t_next, dt, theta)
        if not np.all(np.isfinite(u)):
            raise SolverDiverged("time march produced non-finite values", t=float(t_now))
        iterations += its
        worst = max(worst, r)
        values[n] = u
    if not obstacle:
        record_solver("splu", time_steps)
    u0 = values[0]
    method = config.obstacle_method if obstacle else "theta"
    sol = PdeSolution(grid, values.reshape((time_steps + 1,) + grid.shape), worst, iterations, method,
                      spec.boundary_mode, times)
    sol.startup = startup
    if obstacle:
        psi0 = np.where(eq, spec.psi(pts, 0.0), -np.inf)
        sol.complementarity_residual = worst
        sol.active_set = (eq & (u0 <= psi0 + config.obstacle_tol)).reshape(grid.shape)
    return sol


def solve_parabolic(model: DiffusionModel, domain: DomainSpec, spec: Any, grid: Optional[Grid] = None,
                    time_steps: Optional[int] = None, theta: Optional[float] = None,
                    config: Optional[OracleConfig] = None, scenario: Optional[str] = None) -> PdeSolution:
    """
    Backward theta-scheme from the terminal data g(T, .) to t = 0.

    With theta = 0.5 the march starts with two implicit half-steps (Rannacher)
    when the terminal data is not smooth; config.rannacher forces it on or off.
    """
    config = config or OracleConfig()
    theta = config.theta if theta is None else theta
    if not 0.5 <= theta <= 1.0:
        raise ConfigError("theta must lie in [0.5, 1]", theta=theta)
    spec = _mode(spec, model, domain, scenario)
    if not spec.is_parabolic:
        raise ConfigError("solve_parabolic needs a parabolic problem", kind=spec.kind)
    grid = _grid(domain, grid, config)
    return _march(model, spec, grid, config, time_steps or config.time_steps, theta, obstacle=False)


def solve_obstacle(model: DiffusionModel, domain: DomainSpec, spec: Any, grid: Optional[Grid] = None,
                   time_steps: Optional[int] = None, config: Optional[OracleConfig] = None,
                   scenario: Optional[str] = None) -> PdeSolution:
    """
    Solve min(A u - f, u - psi) = 0 (elliptic) or the parabolic analogue.

    The parabolic problem runs one projected solve per time step, warm-started
    from the previous slice.
    """
    config = config or OracleConfig()
    spec = _mode(spec, model, domain, scenario)
    if spec.psi is None:
        raise CompatibilityError("obstacle solve needs psi", category="compatibility/missing-field", field="problem.psi")
    grid = _grid(domain, grid, config)
    if spec.is_parabolic:
        return _march(model, spec, grid, config, time_steps or config.time_steps, config.theta, obstacle=True)
    op = discretize(model, grid, spec.boundary_mode)
    pts = op.points
    eq = op.equation
    rhs = op.load(spec.f, spec.g, 0.0)
    psi = np.where(eq, spec.psi(pts, 0.0), -np.inf)
    free, _, _ = linear_solve(op.matrix, rhs, config.tol, config.maxiter)
    start = np.maximum(free, psi)
    u, iterations, comp = _projected(config.obstacle_method, op.matrix, rhs, psi, start, eq, config)
    sol = PdeSolution(grid, u.reshape(grid.shape), comp, iterations, config.obstacle_method, spec.boundary_mode)
    sol.complementarity_residual = comp
    sol.active_set = (eq & (u <= psi + config.obstacle_tol)).reshape(grid.shape)
    return sol
