"""
Command-line entry point.

    python -m fkdegen SUBCOMMAND CONFIG [--set path=value ...] [--threads N]
        [--output-dir DIR] [--dump-paths N] [--metrics-file PATH]

SUBCOMMAND is one of classify, price, exercise, oracle, compare. The report
goes to stdout as sorted-key JSON, logs go to stderr. Exit codes: 0 success,
2 validation failure, 3 numerical failure, 1 internal error.
"""
import argparse
import sys
import time
import uuid
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, TextIO

import numpy as np

from .boundary import classify_origin
from .config import get_settings
from .domain import DomainSpec
from .errors import ConfigError, FkDegenError
from .fk_estimate import (
    Estimate,
    ProblemSpec,
    estimate_elliptic,
    estimate_parabolic,
    j_functional,
    price_sweep,
    scenario_for,
)
from .logging_utils import RunLogger, get_logger
from .metrics import record_run, write_metrics
from .model import DiffusionModel, validate_model
from .pde_oracle import Grid, PdeSolution, solve_elliptic, solve_obstacle, solve_parabolic
from .reports import (
    ClassifyReport,
    CompareReport,
    ErrorReport,
    ExerciseReport,
    ModelInfo,
    OracleReport,
    PriceReport,
    Report,
)
from .runconfig import RunConfig, load_run_config
from .simulate import PathEngine, SimConfig, StopRule, trace_paths
from .stopping import (
    StoppingResult,
    elliptic_obstacle_value,
    exercise_boundary,
    lsmc_value,
    policy_from_pde,
)
from .storage import ArtifactStorage


SUBCOMMANDS = ("classify", "price", "exercise", "oracle", "compare")


@dataclass
class RunContext:
    """Everything a subcommand handler needs."""

    subcommand: str
    config: RunConfig
    threads: Optional[int]
    storage: ArtifactStorage
    dump_paths: int
    log: RunLogger

    @property
    def write_csv(self) -> bool:
        return self.config.output.csv

    def setup(self) -> "Setup":
        model = self.config.build_model()
        domain = self.config.build_domain(model)
        spec = self.config.build_problem(model)
        points = self.config.query_points(model)
        self.log.stage_started("classify")
        scenario = scenario_for(model, domain)
        self.log.stage_finished("classify", result=scenario, scenario=scenario)
        return Setup(model, domain, spec, points, scenario)

    def sim(self, setup: "Setup") -> SimConfig:
        return self.config.build_sim(setup.model, setup.domain, setup.points[0], self.threads)

    def start_time(self, spec: ProblemSpec) -> Optional[float]:
        if not spec.is_parabolic:
            return None
        return 0.0 if self.config.t is None else float(self.config.t)


@dataclass
class Setup:
    model: DiffusionModel
    domain: DomainSpec
    spec: ProblemSpec
    points: List[List[float]]
    scenario: str


# ---------------------------------------------------------------------------
# classify


def run_classify(ctx: RunContext) -> Report:
    model = ctx.config.build_model()
    domain = ctx.config.build_domain(model)
    ctx.log.stage_started("validate")
    validation = validate_model(model)
    ctx.log.stage_finished("validate", result="accepted")

    probe_b = ctx.config.probe_b or domain.default_probe_b()
    ctx.log.stage_started("classify")
    classification = classify_origin(model, probe_b, check_implications=True)
    ctx.log.stage_finished("classify", result=classification.label, scenario=classification.scenario,
                           label=classification.label)

    payload = classification.to_dict()
    report = ClassifyReport(model=ModelInfo.of(model), analytic_scenario=classification.analytic_scenario,
                            validation=validation.to_dict(), **payload)
    if ctx.write_csv:
        rows = []
        for name in ("S", "M", "Sigma", "N"):
            value = payload.get(name)
            if value is None:
                continue
            for k, partial in enumerate(value["evidence"], start=1):
                rows.append([name, k, probe_b * 2.0 ** (-k), partial])
        report.artifacts["evidence"] = ctx.storage.write_rows("classify_evidence.csv",
                                                              ["integral", "k", "lower", "partial"], rows)
    return report


# ---------------------------------------------------------------------------
# price


def _estimate(ctx: RunContext, setup: Setup, sim: SimConfig, x: Sequence[float]) -> Estimate:
    t = ctx.start_time(setup.spec)
    if setup.spec.is_parabolic:
        return estimate_parabolic(setup.model, setup.domain, setup.spec, t, x, sim, setup.scenario)
    return estimate_elliptic(setup.model, setup.domain, setup.spec, x, sim, setup.scenario)


def _dump_paths(ctx: RunContext, setup: Setup, sim: SimConfig, x: Sequence[float],
                stop_rule: Optional[StopRule] = None) -> Optional[str]:
    if ctx.dump_paths <= 0:
        return None
    spec = setup.spec
    t0 = ctx.start_time(spec) or 0.0
    t_end = float(spec.T) if spec.is_parabolic else sim.t_max
    engine = PathEngine(setup.model, setup.domain, sim, t0, t_end, running_cost=spec.f.evaluator,
                        until=spec.variant, stop_rule=stop_rule)
    sample = trace_paths(engine, np.asarray(x, dtype=float), sim, ctx.dump_paths)
    return ctx.storage.write_paths(sample)


def run_price(ctx: RunContext) -> Report:
    setup = ctx.setup()
    spec = setup.spec
    if spec.is_obstacle:
        raise ConfigError("price evaluates boundary-value problems; use exercise for obstacles",
                          field="problem.kind", kind=spec.kind)
    sim = ctx.sim(setup)
    sweep = len(setup.points) > 1 or bool(ctx.config.times and spec.is_parabolic)

    ctx.log.stage_started("estimate", n_paths=sim.n_paths)
    artifacts: Dict[str, str] = {}
    rows_out = None
    if sweep:
        times = ctx.config.times or [ctx.start_time(spec)]
        rows = price_sweep(setup.model, setup.domain, spec, setup.points, sim, times, setup.scenario)
        head = rows[0].estimate
        t = rows[0].t if spec.is_parabolic else None
        rows_out = [{"point_id": r.point_id, "t": r.t, "x": r.x, **r.estimate.to_dict()} for r in rows]
        if ctx.write_csv:
            artifacts["sweep"] = ctx.storage.write_sweep(rows, setup.model.d)
    else:
        head = _estimate(ctx, setup, sim, setup.points[0])
        t = ctx.start_time(spec)
    ctx.log.stage_finished("estimate", result="ok", n_paths=head.n_paths, scenario=setup.scenario)

    dumped = _dump_paths(ctx, setup, sim, setup.points[0])
    if dumped:
        artifacts["paths"] = dumped
    body = head.to_dict()
    return PriceReport(
        model=ModelInfo.of(setup.model),
        kind=spec.kind,
        variant=spec.variant,
        t=t,
        x=[float(v) for v in setup.points[0]],
        t_max=sim.t_max,
        sweep=rows_out,
        artifacts=artifacts,
        **body,
    )


# ---------------------------------------------------------------------------
# exercise


def _oracle_solution(ctx: RunContext, setup: Setup, grid: Optional[Grid] = None) -> PdeSolution:
    oracle = ctx.config.build_oracle()
    spec = setup.spec
    if spec.is_obstacle:
        return solve_obstacle(setup.model, setup.domain, spec, grid=grid, config=oracle, scenario=setup.scenario)
    if spec.is_parabolic:
        return solve_parabolic(setup.model, setup.domain, spec, grid=grid, config=oracle, scenario=setup.scenario)
    return solve_elliptic(setup.model, setup.domain, spec, grid=grid, config=oracle, scenario=setup.scenario)


def _lsmc(ctx: RunContext, setup: Setup, sim: SimConfig, x: Sequence[float]) -> StoppingResult:
    stopping = ctx.config.stopping
    if setup.spec.is_parabolic:
        return lsmc_value(setup.model, setup.domain, setup.spec, ctx.start_time(setup.spec), x, sim,
                          stopping.degree, stopping.n_exercise, setup.scenario)
    return elliptic_obstacle_value(setup.model, setup.domain, setup.spec, x, sim, stopping.degree,
                                   stopping.n_exercise, setup.scenario)


def run_exercise(ctx: RunContext) -> Report:
    setup = ctx.setup()
    spec = setup.spec
    if not spec.is_obstacle:
        raise ConfigError("exercise needs an obstacle problem", field="problem.kind", kind=spec.kind)
    sim = ctx.sim(setup)
    x = setup.points[0]
    t = ctx.start_time(spec)
    stopping = ctx.config.stopping
    artifacts: Dict[str, str] = {}
    pde_value = None

    if stopping.method == "lsmc":
        ctx.log.stage_started("lsmc", n_paths=sim.n_paths)
        result = _lsmc(ctx, setup, sim, x)
        ctx.log.stage_finished("lsmc", result=result.policy.kind, n_paths=result.estimate.n_paths)
        estimate, policy, value_high = result.estimate, result.policy, result.value_high
    else:
        ctx.log.stage_started("oracle")
        solution = _oracle_solution(ctx, setup)
        refined = None
        if stopping.refine_check:
            refined = _oracle_solution(ctx, setup, solution.grid.refine())
        ctx.log.stage_finished("oracle", result=solution.method, iterations=solution.iterations,
                               residual=solution.residual)
        policy = policy_from_pde(solution, spec.psi, refined, stopping.region_tol)
        pde_value = float(solution.value_at(x, t)[0])
        value_high = None
        if stopping.evaluate_policy:
            ctx.log.stage_started("policy", n_paths=sim.n_paths)
            estimate = j_functional(setup.model, setup.domain, spec, x, policy, sim, t=t, scenario=setup.scenario)
            ctx.log.stage_finished("policy", result=policy.kind, n_paths=estimate.n_paths)
        else:
            estimate = None

    boundary = [[float(a), float(b)] for a, b in exercise_boundary(policy)]
    if boundary and ctx.write_csv:
        level = "t" if spec.is_parabolic else "x_1"
        artifacts["boundary"] = ctx.storage.write_boundary(boundary, level)
    dumped = _dump_paths(ctx, setup, sim, x, policy.as_stop_rule())
    if dumped:
        artifacts["paths"] = dumped

    if estimate is None:
        value_low, stderr, ci95, n_paths, bias, diagnostics = pde_value, 0.0, [pde_value, pde_value], 0, None, {}
    else:
        value_low, stderr, n_paths = estimate.mean, estimate.stderr, estimate.n_paths
        ci95, bias, diagnostics = list(estimate.ci95), estimate.truncation_bias_bound, estimate.diagnostics.to_dict()
    return ExerciseReport(
        model=ModelInfo.of(setup.model),
        kind=spec.kind,
        method=stopping.method,
        t=t,
        x=[float(v) for v in x],
        value_low=value_low,
        value_high=value_high,
        stderr=stderr,
        ci95=ci95,
        n_paths=n_paths,
        truncation_bias_bound=bias,
        diagnostics=diagnostics,
        policy=policy.summary(),
        boundary=boundary,
        pde_value=pde_value,
        artifacts=artifacts,
    )


# ---------------------------------------------------------------------------
# oracle and compare


def run_oracle(ctx: RunContext) -> Report:
    model = ctx.config.build_model()
    domain = ctx.config.build_domain(model)
    spec = ctx.config.build_problem(model)
    scenario = scenario_for(model, domain)
    setup = Setup(model, domain, spec, ctx.config.points or [], scenario)
    ctx.log.stage_started("oracle")
    solution = _oracle_solution(ctx, setup)
    ctx.log.stage_finished("oracle", result=solution.method, iterations=solution.iterations,
                           residual=solution.residual)
    t = ctx.start_time(spec)
    values = [{"x": [float(v) for v in p], "t": t, "u": float(solution.value_at(p, t)[0])} for p in setup.points]
    artifacts: Dict[str, str] = {}
    if ctx.write_csv:
        artifacts["grid"] = ctx.storage.write_solution(solution)
    return OracleReport(model=ModelInfo.of(model), kind=spec.kind, solution=solution.to_dict(),
                        values=values, artifacts=artifacts)


def _mesh_width(solution: PdeSolution) -> float:
    return max(float(np.max(np.diff(axis))) for axis in solution.grid.axes)


def run_compare(ctx: RunContext) -> Report:
    setup = ctx.setup()
    spec = setup.spec
    sim = ctx.sim(setup)
    rules = ctx.config.compare
    ctx.log.stage_started("oracle")
    solution = _oracle_solution(ctx, setup)
    ctx.log.stage_finished("oracle", result=solution.method, iterations=solution.iterations,
                           residual=solution.residual)
    h = _mesh_width(solution)
    t = ctx.start_time(spec)

    rows = []
    ctx.log.stage_started("estimate", n_paths=sim.n_paths)
    for k, x in enumerate(setup.points):
        if spec.is_obstacle:
            estimate = _lsmc(ctx, setup, sim, x).estimate
        else:
            estimate = _estimate(ctx, setup, sim, x)
        pde = float(solution.value_at(x, t)[0])
        diff = abs(estimate.mean - pde)
        if rules.tolerance is not None:
            tolerance = rules.tolerance
        else:
            tolerance = rules.k_stderr * estimate.stderr + rules.C * (h + sim.dt)
            tolerance += estimate.truncation_bias_bound or 0.0
        rows.append({"point_id": k, "t": t if t is not None else 0.0, "x": [float(v) for v in x],
                     "mc_mean": estimate.mean, "mc_stderr": estimate.stderr, "pde": pde, "diff": diff,
                     "tolerance": tolerance, "ok": diff <= tolerance})
    ctx.log.stage_finished("estimate", result="ok", n_paths=sim.n_paths * len(rows))

    artifacts: Dict[str, str] = {}
    if ctx.write_csv:
        artifacts["compare"] = ctx.storage.write_compare(rows, setup.model.d)
    return CompareReport(
        model=ModelInfo.of(setup.model),
        kind=spec.kind,
        h=h,
        dt=sim.dt,
        rows=rows,
        max_abs_diff=max(r["diff"] for r in rows),
        passed=all(r["ok"] for r in rows),
        solution=solution.to_dict(),
        artifacts=artifacts,
    )


HANDLERS: Dict[str, Callable[[RunContext], Report]] = {
    "classify": run_classify,
    "price": run_price,
    "exercise": run_exercise,
    "oracle": run_oracle,
    "compare": run_compare,
}


# ---------------------------------------------------------------------------
# entry points


def run(
    subcommand: str,
    config_path: str,
    overrides: Sequence[str] = (),
    threads: Optional[int] = None,
    output_dir: Optional[str] = None,
    dump_paths: Optional[int] = None,
    metrics_file: Optional[str] = None,
    stdout: Optional[TextIO] = None,
) -> int:
    """
    Run one subcommand and print its JSON report.

    Args:
        subcommand: classify, price, exercise, oracle or compare
        config_path: Run-config JSON file
        overrides: Dotted "path=value" overrides applied before validation
        threads: Worker cap for path batches (falls back to FKDEGEN_THREADS)
        output_dir: Artifact directory (falls back to output.dir, then FKDEGEN_OUTPUT_DIR)
        dump_paths: Number of trajectories to write as CSV
        metrics_file: Prometheus textfile target
        stdout: Stream for the report (sys.stdout by default)

    Returns:
        Process exit code
    """
    settings = get_settings()
    logger = get_logger()
    out = stdout or sys.stdout
    log = RunLogger(logger, str(uuid.uuid4()), subcommand)
    started = time.perf_counter()
    log.stage_started("run")
    try:
        if subcommand not in HANDLERS:
            raise ConfigError(f"unknown subcommand '{subcommand}'", field="subcommand", known=list(SUBCOMMANDS))
        config = load_run_config(config_path, overrides)
        ctx = RunContext(
            subcommand=subcommand,
            config=config,
            threads=threads,
            storage=ArtifactStorage(output_dir or config.output.dir),
            dump_paths=config.output.dump_paths if dump_paths is None else int(dump_paths),
            log=log,
        )
        text = HANDLERS[subcommand](ctx).to_json()
        code, result = 0, "ok"
    except FkDegenError as exc:
        log.error(exc.message, result=exc.category)
        text = ErrorReport(subcommand=subcommand, category=exc.category, message=exc.message,
                           detail=exc.detail).to_json()
        code, result = exc.exit_code, exc.category.split("/")[0]
    except Exception as exc:
        # no traceback on stdout; the type goes to the log
        logger.exception("unhandled error", extra={"run_id": log.run_id, "subcommand": subcommand,
                                                   "detail": type(exc).__name__})
        text = ErrorReport(subcommand=subcommand, category="internal", message="internal error",
                           detail={"type": type(exc).__name__}).to_json()
        code, result = 1, "internal"
    out.write(text + "\n")
    out.flush()
    latency_ms = (time.perf_counter() - started) * 1000.0
    log.stage_finished("run", result=result)
    record_run(subcommand, result, latency_ms)
    write_metrics(metrics_file or settings.metrics_file)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fkdegen",
        description="Feynman-Kac evaluation, boundary classification and PDE cross-checks for degenerate diffusions",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("config", help="run-config JSON file")
        cmd.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                         help="dotted override, e.g. sim.dt=0.001 (repeatable)")
        cmd.add_argument("--threads", type=int, default=None, help="worker cap for path batches")
        cmd.add_argument("--output-dir", default=None, help="directory for CSV artifacts")
        cmd.add_argument("--dump-paths", type=int, default=None, metavar="N", help="write N trajectories as CSV")
        cmd.add_argument("--metrics-file", default=None, help="prometheus textfile to write after the run")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(
        args.subcommand,
        args.config,
        overrides=args.overrides,
        threads=args.threads,
        output_dir=args.output_dir,
        dump_paths=args.dump_paths,
        metrics_file=args.metrics_file,
    )
