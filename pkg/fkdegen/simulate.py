"""
Path simulation for the degenerate SDE system.

Full-truncation Euler on the degenerate coordinate, vectorised over batches
of paths. Each batch owns a counter-based Philox stream keyed by
(seed, stream, batch index), so results do not depend on how batches are
scheduled across threads. The engine tracks, per path, the discount
integral, the discounted running cost, the first exit counting Gamma0 (tau),
the first exit through Gamma1 only (lambda) and an optional stopping rule.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, model_validator

from .config import get_settings
from .domain import FACE_GAMMA0, FACE_GAMMA1, FACE_HORIZON, FACE_NAMES, FACE_NONE, DomainSpec
from .errors import ConfigError, OutOfRange
from .fields import Field, as_points
from .metrics import record_paths
from .model import DiffusionModel


FACE_STOP = 4
EXIT_FACES = {**FACE_NAMES, FACE_STOP: "stop"}

StopRule = Callable[[float, np.ndarray, int], np.ndarray]


class SimConfig(BaseModel):
    """Simulation controls shared by every Monte Carlo estimator."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = PydanticField(1e-3, gt=0)
    t_max: float = PydanticField(1.0, gt=0)
    boundary_tol: float = PydanticField(1e-10, ge=0)
    substep_factor: int = PydanticField(8, ge=1)
    near_boundary_scale: float = PydanticField(1.0, gt=0)
    bridge_exit: bool = False
    seed: int = PydanticField(0, ge=0, lt=2 ** 64)
    antithetic: bool = False
    n_paths: int = PydanticField(10000, ge=1)
    batch_size: Optional[int] = PydanticField(None, ge=1)
    threads: Optional[int] = PydanticField(None, ge=1)

    @model_validator(mode="after")
    def check_horizon(self) -> "SimConfig":
        if self.dt > self.t_max:
            raise ValueError("dt must not exceed t_max")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        return self

    @property
    def near_threshold(self) -> float:
        """x_d level below which steps are split into substep_factor sub-steps."""
        tol = self.boundary_tol
        return max(10.0 * tol, 10.0 * math.sqrt(tol) * self.near_boundary_scale)

    def check_domain(self, domain: DomainSpec) -> None:
        extent = domain.smallest_extent()
        if math.isfinite(extent) and not self.boundary_tol < extent / 100.0:
            raise ConfigError("boundary_tol must be below 1/100 of the smallest domain extent",
                              field="sim.boundary_tol", boundary_tol=self.boundary_tol, extent=extent)

    def resolved_batch_size(self) -> int:
        return self.batch_size or get_settings().batch_size

    def resolved_threads(self) -> int:
        return get_settings().resolve_threads(self.threads)


def path_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    """Counter-based generator for (seed, stream, index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(index)])))


# ---------------------------------------------------------------------------
# one step


def _euler(model: DiffusionModel, x: np.ndarray, dt: float, noise: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    drift = model.b(x)
    vol = model.degeneracy(x, 0.5 * model.beta)
    diffusion = np.einsum("nij,nj->ni", model.sigma_tilde(x), noise)
    x_new = x + drift * dt + vol[:, None] * diffusion
    raw = x_new[:, -1].copy()
    x_new[:, -1] = np.maximum(raw, 0.0)
    return x_new, raw


def step(model: DiffusionModel, x: Any, dt: float, noise: Any) -> np.ndarray:
    """
    One full-truncation Euler step.

    Args:
        model: Diffusion model
        x: State (d,) or states (n, d) in the closed half-space
        dt: Step size
        noise: Brownian increments (m,) or (n, m) with variance dt

    Returns:
        Next state(s), same shape as x
    """
    pts = as_points(x)
    z = np.asarray(noise, dtype=float).reshape(pts.shape[0], model.m)
    x_new, _ = _euler(model, pts, dt, z)
    return x_new[0] if np.asarray(x).ndim == 1 else x_new


def bridge_increments(rng: np.random.Generator, coarse: np.ndarray, factor: int, h: float,
                      rows: Optional[np.ndarray] = None, antithetic: bool = False) -> np.ndarray:
    """
    Split coarse Brownian increments into factor sub-increments.

    The sub-increments are drawn from the Brownian bridge pinned to the coarse
    increment, so each row sums to its coarse increment.

    Args:
        rng: Generator of the batch
        coarse: Coarse increments (n, m) with variance h
        factor: Number of sub-steps
        h: Coarse step size
        rows: Batch indices of the rows of coarse; with antithetic sampling,
            rows 2i and 2i+1 get mirrored bridge residuals
        antithetic: Pair rows by batch index

    Returns:
        Sub-increments (n, factor, m)
    """
    coarse = np.asarray(coarse, dtype=float)
    n, m = coarse.shape
    if antithetic:
        rows = np.arange(n) if rows is None else np.asarray(rows)
        pairs, inverse = np.unique(rows // 2, return_inverse=True)
        g = rng.standard_normal((pairs.size, factor, m))[inverse.reshape(-1)]
        odd = rows % 2 == 1
        g[odd] = -g[odd]
    else:
        g = rng.standard_normal((n, factor, m))
    residual = (g - g.mean(axis=1, keepdims=True)) * math.sqrt(h / factor)
    return coarse[:, None, :] / factor + residual


# ---------------------------------------------------------------------------
# engine


@dataclass
class ExitArrays:
    """Per-path exit records; face FACE_NONE means not yet exited."""

    time: np.ndarray
    point: np.ndarray
    face: np.ndarray
    discount: np.ndarray
    running: np.ndarray

    @classmethod
    def empty(cls, n: int, d: int) -> "ExitArrays":
        return cls(np.full(n, np.nan), np.full((n, d), np.nan), np.zeros(n, dtype=int),
                   np.full(n, np.nan), np.full(n, np.nan))

    def set(self, idx: np.ndarray, time: Any, point: np.ndarray, face: Any, discount: np.ndarray,
            running: np.ndarray) -> None:
        self.time[idx] = time
        self.point[idx] = point
        self.face[idx] = face
        self.discount[idx] = discount
        self.running[idx] = running

    @property
    def exited(self) -> np.ndarray:
        return self.face != FACE_NONE

    @classmethod
    def concat(cls, parts: Sequence["ExitArrays"]) -> "ExitArrays":
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ("time", "point", "face", "discount", "running")))


@dataclass
class Snapshot:
    time: float
    states: np.ndarray
    discount: np.ndarray
    running: np.ndarray
    alive: np.ndarray

    @classmethod
    def concat(cls, parts: Sequence["Snapshot"]) -> "Snapshot":
        return cls(parts[0].time, *(np.concatenate([getattr(p, name) for p in parts])
                                    for name in ("states", "discount", "running", "alive")))


@dataclass
class PathSample:
    """Everything an estimator needs from a set of simulated paths."""

    node_times: np.ndarray
    tau: ExitArrays
    lam: ExitArrays
    stop: ExitArrays
    touches: np.ndarray
    snapshots: Dict[int, Snapshot] = field(default_factory=dict)
    trajectory: Optional[np.ndarray] = None
    trajectory_discount: Optional[np.ndarray] = None
    trajectory_flags: Optional[np.ndarray] = None
    trajectory_killing: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return int(self.touches.size)

    def exit_for(self, variant: str) -> ExitArrays:
        return self.tau if variant == "tau" else self.lam

    def scheme_violations(self, scenario: Optional[str]) -> int:
        """Paths that touched Gamma0 although the origin is unattainable (scenario A)."""
        if scenario != "A":
            return 0
        return int(np.count_nonzero(self.touches))


def node_times(t0: float, t_end: float, dt: float) -> np.ndarray:
    span = t_end - t0
    if span <= 0.0:
        return np.array([t0])
    n_steps = max(1, int(math.ceil(span / dt - 1e-9)))
    times = t0 + dt * np.arange(n_steps + 1, dtype=float)
    times[-1] = t_end
    return times


class PathEngine:
    """
    Simulates batches of paths between t0 and t_end.

    The engine itself holds only immutable inputs; every call to run() keeps
    its own state, so one engine can serve several threads.
    """

    def __init__(
        self,
        model: DiffusionModel,
        domain: DomainSpec,
        config: SimConfig,
        t0: float,
        t_end: float,
        running_cost: Optional[Field] = None,
        until: str = "lambda",
        stop_rule: Optional[StopRule] = None,
        snapshot_nodes: Sequence[int] = (),
        record: int = 0,
    ):
        if domain.d != model.d:
            raise ConfigError("domain and model dimensions differ", domain=domain.d, model=model.d)
        if until not in ("tau", "lambda"):
            raise ConfigError(f"unknown exit variant '{until}'", field="variant")
        self.model = model
        self.domain = domain
        self.config = config
        self.t0 = float(t0)
        self.t_end = float(t_end)
        self.running_cost = running_cost
        self.until = until
        self.stop_rule = stop_rule
        self.snapshot_nodes = tuple(sorted(set(int(k) for k in snapshot_nodes)))
        self.record = int(record)
        self.times = node_times(self.t0, self.t_end, config.dt)

    def run(self, x0: Any, n: int, rng: np.random.Generator, record: bool = False) -> PathSample:
        batch = _Batch(self, np.asarray(x0, dtype=float), n, rng, self.record if record else 0)
        return batch.run()


class _Batch:
    def __init__(self, engine: PathEngine, x0: np.ndarray, n: int, rng: np.random.Generator, record: int):
        self.e = engine
        self.model = engine.model
        self.domain = engine.domain
        self.cfg = engine.config
        self.rng = rng
        self.n = n
        d = self.model.d
        if x0.shape != (d,):
            raise ConfigError("start point has the wrong dimension", d=d, got=list(x0.shape))
        self.X = np.tile(x0, (n, 1))
        self.D = np.zeros(n)
        self.R = np.zeros(n)
        self.alive = np.ones(n, dtype=bool)
        self.tau_open = np.ones(n, dtype=bool)
        self.lam_open = np.ones(n, dtype=bool)
        self.touches = np.zeros(n, dtype=int)
        self.tau = ExitArrays.empty(n, d)
        self.lam = ExitArrays.empty(n, d)
        self.stop = ExitArrays.empty(n, d)
        self.snapshots: Dict[int, Snapshot] = {}
        self.n_record = min(record, n)
        self.flags = np.zeros(n, dtype=int)

    # running cost, discounted by e^{-D}
    def _cost(self, x: np.ndarray, t: Any, D: np.ndarray) -> np.ndarray:
        if self.e.running_cost is None:
            return np.zeros(x.shape[0])
        return np.exp(-D) * self.e.running_cost(x, t)

    def _close(self, idx: np.ndarray) -> None:
        self.alive[idx] = False

    def _start(self) -> None:
        tol = self.cfg.boundary_tol
        t0 = self.e.t0
        on1 = self.domain.on_gamma1(self.X)
        if np.any(on1):
            idx = np.nonzero(on1)[0]
            zeros = np.zeros(idx.size)
            self.tau.set(idx, t0, self.X[idx], FACE_GAMMA1, zeros, zeros)
            self.lam.set(idx, t0, self.X[idx], FACE_GAMMA1, zeros, zeros)
            self.tau_open[idx] = False
            self.lam_open[idx] = False
            self._close(idx)
        on0 = (~on1) & (self.X[:, -1] <= tol)
        if np.any(on0):
            idx = np.nonzero(on0)[0]
            zeros = np.zeros(idx.size)
            point = self.X[idx].copy()
            point[:, -1] = 0.0
            self.tau.set(idx, t0, point, FACE_GAMMA0, zeros, zeros)
            self.tau_open[idx] = False
            self.touches[idx] += 1
            if self.e.until == "tau":
                self._close(idx)
        self._check_stop(0)

    def _check_stop(self, node: int) -> None:
        rule = self.e.stop_rule
        if rule is None:
            return
        idx = np.nonzero(self.alive)[0]
        if idx.size == 0:
            return
        t = self.e.times[node]
        hit = np.asarray(rule(t, self.X[idx], node), dtype=bool)
        if np.any(hit):
            sel = idx[hit]
            self.stop.set(sel, t, self.X[sel], FACE_STOP, self.D[sel], self.R[sel])
            self._close(sel)
            self.flags[sel] = FACE_STOP

    def _exit_values(self, theta, t, h, D, R, c_old, cost_old, point):
        """Time, discount and running cost at a fraction theta of the step."""
        part = theta * h
        D_exit = D + 0.5 * (c_old + self.model.c(point)) * part
        cost_exit = self._cost(point, t + part, D_exit)
        return t + part, D_exit, R + 0.5 * (cost_old + cost_exit) * part

    def _bridge_crossings(self, x: np.ndarray, x_new: np.ndarray, h: float, frac: np.ndarray,
                          which: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Gamma1 crossings of the Brownian bridge between end points that stayed inside."""
        faces = self.domain.gamma1_faces()
        quiet = ~np.isfinite(frac)
        if not faces or not np.any(quiet):
            return frac, which
        vol2 = self.model.degeneracy(x, self.model.beta)
        st = self.model.sigma_tilde(x)
        survive = np.ones(x.shape[0])
        best = np.zeros(x.shape[0])
        best_face = np.full(x.shape[0], -1, dtype=int)
        for k, face in enumerate(faces):
            var = vol2 * np.sum(st[:, face.axis, :] ** 2, axis=1) * h
            gaps = np.abs(face.value - x[:, face.axis]) * np.abs(face.value - x_new[:, face.axis])
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                p = np.where(var > 0.0, np.exp(-2.0 * gaps / var), 0.0)
            survive *= 1.0 - p
            better = p > best
            best = np.where(better, p, best)
            best_face = np.where(better, k, best_face)
        u = self.rng.random(x.shape[0])
        # crossed paths leave at mid-step
        hit = quiet & (u < 1.0 - survive)
        return np.where(hit, 0.5, frac), np.where(hit, best_face, which)

    def _segment(self, idx: np.ndarray, t: float, h: float, noise: np.ndarray) -> None:
        if idx.size == 0:
            return
        tol = self.cfg.boundary_tol
        x = self.X[idx]
        D = self.D[idx]
        R = self.R[idx]
        x_new, raw = _euler(self.model, x, h, noise)
        c_old = self.model.c(x)
        c_new = self.model.c(x_new)
        D_new = D + 0.5 * (c_old + c_new) * h
        cost_old = self._cost(x, t, D)
        R_new = R + 0.5 * (cost_old + self._cost(x_new, t + h, D_new)) * h

        frac1, face1 = self.domain.first_gamma1_crossing(x, x_new)
        if self.cfg.bridge_exit:
            frac1, face1 = self._bridge_crossings(x, x_new, h, frac1, face1)
        touch = x_new[:, -1] <= tol
        xd = x[:, -1]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac0 = np.where(xd <= tol, 0.0, np.clip((xd - tol) / (xd - raw), 0.0, 1.0))
        frac0 = np.where(touch, frac0, np.inf)
        self.touches[idx] += touch

        tau_open = self.tau_open[idx]
        theta_tau = np.where(tau_open, np.minimum(frac1, frac0), np.inf)
        hit_tau = np.isfinite(theta_tau)
        if np.any(hit_tau):
            sel = np.nonzero(hit_tau)[0]
            th = theta_tau[sel]
            via1 = frac1[sel] <= frac0[sel]
            point = x[sel] + th[:, None] * (x_new[sel] - x[sel])
            point = np.where(via1[:, None], self.domain.project_to_face(point, face1[sel]), point)
            point[~via1, -1] = 0.0
            time, D_e, R_e = self._exit_values(th, t, h, D[sel], R[sel],
                                               c_old[sel], cost_old[sel], point)
            faces = np.where(via1, FACE_GAMMA1, FACE_GAMMA0)
            self.tau.set(idx[sel], time, point, faces, D_e, R_e)
            self.tau_open[idx[sel]] = False

        lam_open = self.lam_open[idx]
        hit_lam = lam_open & np.isfinite(frac1)
        if np.any(hit_lam):
            sel = np.nonzero(hit_lam)[0]
            th = frac1[sel]
            point = self.domain.project_to_face(x[sel] + th[:, None] * (x_new[sel] - x[sel]), face1[sel])
            time, D_e, R_e = self._exit_values(th, t, h, D[sel], R[sel],
                                               c_old[sel], cost_old[sel], point)
            self.lam.set(idx[sel], time, point, FACE_GAMMA1, D_e, R_e)
            self.lam_open[idx[sel]] = False

        finished = hit_lam if self.e.until == "lambda" else hit_tau
        keep = ~finished
        self.X[idx[keep]] = x_new[keep]
        self.D[idx[keep]] = D_new[keep]
        self.R[idx[keep]] = R_new[keep]
        if np.any(finished):
            done = idx[finished]
            records = self.lam if self.e.until == "lambda" else self.tau
            self.X[done] = records.point[done]
            self.D[done] = records.discount[done]
            self.R[done] = records.running[done]
            self.flags[done] = records.face[done]
            self._close(done)

    def _noise(self, h: float) -> np.ndarray:
        m = self.model.m
        if self.cfg.antithetic:
            # pairs are adjacent: path 2i+1 mirrors path 2i
            half = self.rng.standard_normal(((self.n + 1) // 2, m))
            z = np.empty((self.n, m))
            z[0::2] = half
            z[1::2] = -half[: self.n // 2]
        else:
            z = self.rng.standard_normal((self.n, m))
        return z * math.sqrt(h)

    def _snapshot(self, node: int) -> None:
        if node in self.e.snapshot_nodes:
            self.snapshots[node] = Snapshot(float(self.e.times[node]), self.X.copy(), self.D.copy(),
                                            self.R.copy(), self.alive.copy())

    def run(self) -> PathSample:
        times = self.e.times
        n_nodes = times.size
        traj = traj_disc = traj_flags = traj_kill = None
        if self.n_record:
            traj = np.empty((self.n_record, n_nodes, self.model.d))
            traj_disc = np.empty((self.n_record, n_nodes))
            traj_flags = np.empty((self.n_record, n_nodes), dtype=int)
            traj_kill = np.empty((self.n_record, n_nodes))

        def remember(node: int) -> None:
            if traj is not None:
                traj[:, node] = self.X[: self.n_record]
                traj_disc[:, node] = self.D[: self.n_record]
                traj_flags[:, node] = self.flags[: self.n_record]
                traj_kill[:, node] = self.model.c(self.X[: self.n_record])

        self._start()
        self._snapshot(0)
        remember(0)
        threshold = self.cfg.near_threshold
        factor = self.cfg.substep_factor
        last_snapshot = max(self.e.snapshot_nodes, default=-1)
        for k in range(n_nodes - 1):
            if traj is None and k >= last_snapshot and not np.any(self.alive):
                break
            t = float(times[k])
            h = float(times[k + 1] - times[k])
            noise = self._noise(h)
            idx = np.nonzero(self.alive)[0]
            if idx.size:
                near = self.X[idx, -1] < threshold
                self._segment(idx[~near], t, h, noise[idx[~near]])
                sub = idx[near]
                if sub.size and factor > 1:
                    hs = h / factor
                    increments = bridge_increments(self.rng, noise[sub], factor, h, rows=sub,
                                                   antithetic=self.cfg.antithetic)
                    for s in range(factor):
                        live = self.alive[sub]
                        if not np.any(live):
                            break
                        self._segment(sub[live], t + s * hs, hs, increments[live, s])
                elif sub.size:
                    self._segment(sub, t, h, noise[sub])
                self._check_stop(k + 1)
            self._snapshot(k + 1)
            remember(k + 1)

        t_end = self.e.t_end
        for records, open_mask in ((self.tau, self.tau_open), (self.lam, self.lam_open)):
            pending = np.nonzero(open_mask & self.alive)[0]
            if pending.size:
                records.set(pending, t_end, self.X[pending], FACE_HORIZON, self.D[pending], self.R[pending])
        return PathSample(times, self.tau, self.lam, self.stop, self.touches, self.snapshots,
                          traj, traj_disc, traj_flags, traj_kill)


def _merge(parts: List[PathSample]) -> PathSample:
    first = parts[0]
    snaps = {node: Snapshot.concat([p.snapshots[node] for p in parts]) for node in first.snapshots}
    return PathSample(
        first.node_times,
        ExitArrays.concat([p.tau for p in parts]),
        ExitArrays.concat([p.lam for p in parts]),
        ExitArrays.concat([p.stop for p in parts]),
        np.concatenate([p.touches for p in parts]),
        snaps,
        first.trajectory,
        first.trajectory_discount,
        first.trajectory_flags,
        first.trajectory_killing,
    )


def run_paths(engine: PathEngine, x0: Any, config: SimConfig, stream: int = 0,
              n_paths: Optional[int] = None, metrics_engine: str = "estimate") -> PathSample:
    """
    Simulate n_paths paths in fixed-size batches, in parallel when threads > 1.

    Batches are merged in batch order, so the output does not depend on the
    thread count.
    """
    total = int(n_paths or config.n_paths)
    size = config.resolved_batch_size()
    if config.antithetic and size % 2:
        size += 1
    sizes = [size] * (total // size)
    if total % size:
        sizes.append(total % size)

    def work(b: int) -> PathSample:
        return engine.run(x0, sizes[b], path_rng(config.seed, stream, b), record=(b == 0))

    threads = config.resolved_threads()
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(b) for b in range(len(sizes))]
    sample = _merge(parts)
    record_paths(metrics_engine, sample.n_paths, int(np.count_nonzero(sample.touches)))
    return sample


def trace_paths(engine: PathEngine, x0: Any, config: SimConfig, n_record: int, stream: int = 0) -> PathSample:
    """Re-run batch 0 of run_paths with the first n_record trajectories kept."""
    size = config.resolved_batch_size()
    if config.antithetic and size % 2:
        size += 1
    size = min(int(config.n_paths), size)
    engine = PathEngine(engine.model, engine.domain, engine.config, engine.t0, engine.t_end,
                        running_cost=engine.running_cost, until=engine.until, stop_rule=engine.stop_rule,
                        record=n_record)
    return engine.run(x0, size, path_rng(config.seed, stream, 0), record=True)


# ---------------------------------------------------------------------------
# single paths


@dataclass
class ExitInfo:
    time: float
    point: List[float]
    face: str


@dataclass
class SimulatedPath:
    times: np.ndarray
    states: np.ndarray
    discount: np.ndarray
    killing: np.ndarray
    tau_exit: Optional[ExitInfo]
    lambda_exit: Optional[ExitInfo]
    gamma0_touches: int
    flags: np.ndarray
    scheme_violation: bool = False

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_last(self) -> float:
        if self.lambda_exit is not None:
            return self.lambda_exit.time
        return float(self.times[-1])


def _exit_info(records: ExitArrays, k: int) -> Optional[ExitInfo]:
    face = int(records.face[k])
    if face == FACE_NONE:
        return None
    return ExitInfo(float(records.time[k]), records.point[k].tolist(), EXIT_FACES[face])


def simulate_path(
    model: DiffusionModel,
    domain: DomainSpec,
    x0: Any,
    t0: float,
    config: SimConfig,
    rng: Optional[np.random.Generator] = None,
    path_index: int = 0,
    scenario: Optional[str] = None,
    deterministic: bool = False,
) -> SimulatedPath:
    """
    Simulate one path until its lambda-exit or the horizon t0 + t_max.

    Args:
        model: Diffusion model
        domain: Box domain
        x0: Start point in the closure of the domain
        t0: Start time
        config: Simulation controls
        rng: Generator to use; defaults to the (seed, 0, path_index) stream
        path_index: Stream index when rng is not given
        scenario: "A" flags a Gamma0 tau-exit as a scheme violation
        deterministic: Zero noise (frozen drift flow)

    Returns:
        SimulatedPath with the recorded nodes and both exit records
    """
    x0 = np.asarray(x0, dtype=float)
    if not domain.in_closure(x0)[0] or x0[-1] < 0.0:
        raise OutOfRange("start point is outside the closed domain", x0=x0.tolist())
    config.check_domain(domain)
    if deterministic:
        config = config.model_copy(update={"antithetic": False})
    engine = PathEngine(model, domain, config, t0, t0 + config.t_max, record=1)
    generator = rng if rng is not None else path_rng(config.seed, 0, path_index)
    if deterministic:
        generator = _ZeroGenerator()
    sample = engine.run(x0, 1, generator, record=True)
    tau = _exit_info(sample.tau, 0)
    lam = _exit_info(sample.lam, 0)
    assert sample.trajectory is not None
    last = sample.node_times.size
    if lam is not None and lam.face == "gamma1":
        last = int(np.searchsorted(sample.node_times, lam.time, side="left")) + 1
        last = min(last, sample.node_times.size)
    times = sample.node_times[:last].copy()
    states = sample.trajectory[0, :last].copy()
    discount = sample.trajectory_discount[0, :last].copy()
    killing = sample.trajectory_killing[0, :last].copy()
    if lam is not None and lam.face == "gamma1":
        times[-1] = lam.time
        states[-1] = lam.point
        discount[-1] = float(sample.lam.discount[0])
        killing[-1] = float(model.c(np.asarray(lam.point))[0])
    violation = scenario == "A" and tau is not None and tau.face == "gamma0"
    record_paths("path", 1, int(sample.touches[0] > 0))
    return SimulatedPath(times, states, discount, killing, tau, lam, int(sample.touches[0]),
                         sample.trajectory_flags[0, :last].copy(), violation)


class _ZeroGenerator:
    """Stands in for a Generator when the noise is frozen to zero."""

    def standard_normal(self, shape: Any) -> np.ndarray:
        return np.zeros(shape)

    def random(self, shape: Any) -> np.ndarray:
        return np.ones(shape)


def discount_weight(path: SimulatedPath, s: float) -> float:
    """
    exp(-int_{t0}^{s} c(X_u) du) by the trapezoid rule along the path.

    Between nodes the killing rate is interpolated linearly, which is exact
    for killing rates that are affine in the state.
    """
    times = path.times
    if s < times[0] or s > path.t_last + 1e-15:
        raise OutOfRange("time is outside the simulated range", s=s, t0=float(times[0]), t_last=path.t_last)
    k = int(np.searchsorted(times, s, side="right")) - 1
    k = min(max(k, 0), times.size - 1)
    if k == times.size - 1 or s == times[k]:
        return math.exp(-float(path.discount[k]))
    span = times[k + 1] - times[k]
    frac = (s - times[k]) / span
    c_k = path.killing[k]
    c_s = c_k + frac * (path.killing[k + 1] - c_k)
    return math.exp(-(float(path.discount[k]) + 0.5 * (c_k + c_s) * (s - times[k])))


def sample_paths(
    model: DiffusionModel,
    domain: DomainSpec,
    x0: Any,
    t0: float,
    t_end: float,
    config: SimConfig,
    snapshot_times: Sequence[float] = (),
    until: str = "lambda",
    stream: int = 0,
) -> PathSample:
    """Simulate config.n_paths paths and keep snapshots at the requested times."""
    times = node_times(t0, t_end, config.dt)
    nodes = [int(np.argmin(np.abs(times - s))) for s in snapshot_times]
    engine = PathEngine(model, domain, config, t0, t_end, until=until, snapshot_nodes=nodes)
    return run_paths(engine, x0, config, stream=stream, metrics_engine="sample")


# ---------------------------------------------------------------------------
# supermartingale diagnostic


@dataclass
class ProfilePoint:
    time: float
    mean: float
    stderr: float


def supermartingale_profile(
    model: DiffusionModel,
    x0: Any,
    times: Sequence[float],
    config: SimConfig,
    M: float,
    domain: Optional[DomainSpec] = None,
) -> List[ProfilePoint]:
    """
    Sample mean of Z_t = e^{-int c} |X_t|^2 + M/c0 e^{-c0 t} at the given times.

    Paths are not stopped at exits; by default they run on the whole half-space.
    """
    domain = domain or DomainSpec.half_space(model.d)
    sample = sample_paths(model, domain, x0, 0.0, max(times), config, snapshot_times=times)
    grid = sample.node_times
    out: List[ProfilePoint] = []
    for s in times:
        node = int(np.argmin(np.abs(grid - s)))
        snap = sample.snapshots[node]
        t = snap.time
        z = np.exp(-snap.discount) * np.sum(snap.states ** 2, axis=1) + M / model.c0 * math.exp(-model.c0 * t)
        out.append(ProfilePoint(t, float(np.mean(z)), float(np.std(z, ddof=1) / math.sqrt(z.size))))
    return out
