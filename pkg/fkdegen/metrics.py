"""
Prometheus metrics helpers.
Counters and histograms for simulation and solver work; exported as a
textfile at the end of a CLI run.
"""
from typing import Optional

from prometheus_client import CollectorRegistry, Counter, Histogram, generate_latest, write_to_textfile


REGISTRY = CollectorRegistry()

paths_simulated_total = Counter(
    "fkdegen_paths_simulated_total",
    "Total simulated paths",
    ["engine"],
    registry=REGISTRY,
)

gamma0_touches_total = Counter(
    "fkdegen_gamma0_touches_total",
    "Paths that touched the degenerate face",
    registry=REGISTRY,
)

solver_iterations_total = Counter(
    "fkdegen_solver_iterations_total",
    "Iterations spent in linear and complementarity solvers",
    ["solver"],
    registry=REGISTRY,
)

runs_total = Counter(
    "fkdegen_runs_total",
    "CLI runs by subcommand and outcome",
    ["subcommand", "result"],
    registry=REGISTRY,
)

run_latency_ms = Histogram(
    "fkdegen_run_latency_ms",
    "Run latency in milliseconds",
    ["subcommand"],
    buckets=[10, 50, 100, 500, 1000, 5000, 10000, 60000, 300000, float("inf")],
    registry=REGISTRY,
)


def record_paths(engine: str, n_paths: int, gamma0_touches: int = 0) -> None:
    """
    Record simulated paths.

    Args:
        engine: Which engine produced them ("estimate", "lsmc", "profile", ...)
        n_paths: Number of paths
        gamma0_touches: How many of them touched the degenerate face
    """
    paths_simulated_total.labels(engine=engine).inc(n_paths)
    if gamma0_touches:
        gamma0_touches_total.inc(gamma0_touches)


def record_solver(solver: str, iterations: int) -> None:
    """
    Record linear or projected solver iterations.

    Args:
        solver: Solver name ("bicgstab", "splu", "psor", "policy")
        iterations: Iterations spent; negative counts are recorded as 0
    """
    solver_iterations_total.labels(solver=solver).inc(max(0, int(iterations)))


def record_run(subcommand: str, result: str, latency_ms: float) -> None:
    """
    Record a finished CLI run.

    Args:
        subcommand: classify, price, exercise, oracle or compare
        result: "ok" or an error category family
        latency_ms: Wall time in milliseconds
    """
    runs_total.labels(subcommand=subcommand, result=result).inc()
    run_latency_ms.labels(subcommand=subcommand).observe(latency_ms)


def get_metrics() -> bytes:
    """
    Generate Prometheus metrics in text format.

    Returns:
        Prometheus metrics as bytes
    """
    return generate_latest(REGISTRY)


def write_metrics(path: Optional[str]) -> None:
    """Write the registry to a textfile-collector file; no-op without a path."""
    if path:
        write_to_textfile(path, REGISTRY)
