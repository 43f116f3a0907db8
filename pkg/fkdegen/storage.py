"""
Artifact writers (CSV and JSON) for CLI runs.
Column orders are fixed; floats are written with 17 significant digits.
"""
import csv
import json
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .config import get_settings
from .fk_estimate import SweepRow
from .pde_oracle import NODE_NAMES, PdeSolution
from .simulate import EXIT_FACES, PathSample


def fmt(value: Any) -> str:
    """17-significant-digit text for floats; everything else as str."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return "" if value is None else str(value)


def axis_names(d: int) -> List[str]:
    return [f"x_{i + 1}" for i in range(d)]


class ArtifactStorage:
    """Writes run artifacts into one output directory."""

    SWEEP_COLUMNS = ("point_id", "t")
    SWEEP_TAIL = ("mean", "stderr", "ci_low", "ci_high")

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or get_settings().output_dir

    def ensure_dir(self) -> str:
        """Create the output directory if it doesn't exist."""
        if self.output_dir and not os.path.exists(self.output_dir):
            os.makedirs(self.output_dir, exist_ok=True)
        return self.output_dir

    def path(self, name: str) -> str:
        return os.path.join(self.ensure_dir(), name)

    def write_rows(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        """
        Write a CSV file.

        Args:
            name: File name inside the output directory
            header: Column names
            rows: Row values (formatted with fmt)

        Returns:
            Path of the written file
        """
        target = self.path(name)
        with open(target, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) for v in row])
        return target

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, sort_keys=True, indent=2)
            handle.write("\n")
        return target

    def write_sweep(self, rows: Sequence[SweepRow], d: int, name: str = "sweep.csv") -> str:
        """point_id, t, x_1..x_d, mean, stderr, ci_low, ci_high."""
        header = list(self.SWEEP_COLUMNS) + axis_names(d) + list(self.SWEEP_TAIL)
        body = []
        for row in rows:
            low, high = row.estimate.ci95
            body.append([row.point_id, row.t, *row.x, row.estimate.mean, row.estimate.stderr, low, high])
        return self.write_rows(name, header, body)

    def write_solution(self, solution: PdeSolution, name: str = "oracle_grid.csv") -> str:
        """x_1..x_d, node, u for elliptic solutions; t, x_1..x_d, node, u per time slab otherwise."""
        pts = solution.grid.points()
        nodes = [NODE_NAMES[int(c)] for c in solution.grid.codes.ravel()]
        d = solution.grid.d
        if not solution.parabolic:
            values = solution.values.ravel()
            body = ([*p, node, u] for p, node, u in zip(pts, nodes, values))
            return self.write_rows(name, axis_names(d) + ["node", "u"], body)

        def slabs() -> Iterable[List[Any]]:
            for t, slab in zip(solution.times, solution.values):
                for p, node, u in zip(pts, nodes, slab.ravel()):
                    yield [float(t), *p, node, u]

        return self.write_rows(name, ["t"] + axis_names(d) + ["node", "u"], slabs())

    def write_paths(self, sample: PathSample, name: str = "paths.csv") -> str:
        """path, node, t, x_1..x_d, discount, killing, flag for the recorded trajectories."""
        if sample.trajectory is None:
            return self.write_rows(name, ["path", "node", "t"], [])
        n_rec, n_nodes, d = sample.trajectory.shape
        header = ["path", "node", "t"] + axis_names(d) + ["discount", "killing", "flag"]

        def body() -> Iterable[List[Any]]:
            for k in range(n_rec):
                for j in range(n_nodes):
                    yield [k, j, float(sample.node_times[j]), *sample.trajectory[k, j],
                           sample.trajectory_discount[k, j], sample.trajectory_killing[k, j],
                           EXIT_FACES.get(int(sample.trajectory_flags[k, j]), "none")]

        return self.write_rows(name, header, body())

    def write_boundary(self, points: Sequence[Sequence[float]], level_name: str = "level",
                       name: str = "exercise_boundary.csv") -> str:
        return self.write_rows(name, [level_name, "location"], points)

    def write_compare(self, rows: Sequence[Dict[str, Any]], d: int, name: str = "compare.csv") -> str:
        """point_id, t, x_1..x_d, mc_mean, mc_stderr, pde, diff, tolerance, ok."""
        header = ["point_id", "t"] + axis_names(d) + ["mc_mean", "mc_stderr", "pde", "diff", "tolerance", "ok"]
        body = ([r["point_id"], r["t"], *r["x"], r["mc_mean"], r["mc_stderr"], r["pde"], r["diff"],
                 r["tolerance"], int(r["ok"])] for r in rows)
        return self.write_rows(name, header, body)
