"""
Tests for the command-line subcommands and their reports.
"""
import io
import json
import os

import jsonschema
import pytest

from fkdegen import cli
from fkdegen.errors import GridTooCoarse
from fkdegen.reports import strip_timestamp

from tests.conftest import load_schema, run_cli


def cir_document(**extra):
    document = {
        "model": {"preset": "cir1d", "params": {"kappa": 2.0, "theta": 0.09, "sigma": 0.3, "killing": 0.05}},
        "problem": {"kind": "parabolic_bvp", "g": {"kind": "affine", "weights": [1.0]}, "T": 1.0},
        "points": [[0.09]],
        "sim": {"dt": 0.01, "n_paths": 2000, "seed": 3},
        "oracle": {"points_per_axis": 41, "time_steps": 50},
    }
    document.update(extra)
    return document


def heston_price_document():
    return {
        "model": {"preset": "heston",
                  "params": {"kappa": 2.0, "theta": 0.09, "sigma_v": 0.3, "rho": -0.5, "r": 0.05}},
        "domain": {"lower": [-1.0, 0.0], "upper": [1.0, None]},
        "problem": {"kind": "parabolic_bvp", "f": 0.05, "g": 1.0, "T": 0.5},
        "points": [[0.0, 0.09]],
        "sim": {"dt": 0.01, "n_paths": 200, "seed": 1},
    }


def put_document():
    payoff = {"kind": "payoff", "strike": 1.0, "option": "put"}
    return {
        "model": {"preset": "gbm1d", "params": {"mu": 0.05, "sigma": 0.2}},
        "problem": {"kind": "parabolic_obstacle", "g": payoff, "psi": payoff, "T": 1.0},
        "points": [[1.0]],
        "sim": {"dt": 0.01, "n_paths": 500, "seed": 2},
        "oracle": {"points_per_axis": 81, "obstacle_method": "policy", "time_steps": 50},
        "stopping": {"method": "pde", "evaluate_policy": False},
    }


def validate(report, name):
    jsonschema.validate(report, load_schema(name))


class TestClassify:
    """Tests for the classify subcommand."""

    def test_regular_origin(self, tmp_path):
        """Test the classification of a CIR origin below the Feller threshold."""
        document = {"model": {"preset": "cir1d", "params": {"kappa": 1.0, "theta": 0.05, "sigma": 0.5}}}
        code, report = run_cli(tmp_path, "classify", document)
        assert code == 0
        assert report["label"] == "Regular"
        assert report["scenario"] == "B"
        assert report["validation"]["accepted"] is True
        assert os.path.exists(report["artifacts"]["evidence"])
        validate(report, "classify")

    def test_probe_override(self, tmp_path):
        """Test that --set overrides reach the report."""
        document = {"model": {"preset": "gbm1d", "params": {"mu": 0.05, "sigma": 0.2}}}
        code, report = run_cli(tmp_path, "classify", document, "probe_b=0.5", "output.csv=false")
        assert code == 0
        assert report["probe_b"] == 0.5
        assert report["artifacts"] == {}


class TestPrice:
    """Tests for the price subcommand."""

    def test_telescoping(self, tmp_path):
        """Test that f = c and g = 1 price to 1."""
        code, report = run_cli(tmp_path, "price", heston_price_document())
        assert code == 0
        assert report["mean"] == pytest.approx(1.0, abs=1e-5)
        assert report["t_max"] == 0.5
        assert report["diagnostics"]["scenario"] == "A"
        validate(report, "price")

    def test_dump_paths(self, tmp_path):
        """Test the trajectory CSV."""
        code, report = run_cli(tmp_path, "price", heston_price_document(), dump_paths=3)
        assert code == 0
        with open(report["artifacts"]["paths"], encoding="utf-8") as handle:
            header = handle.readline().strip()
        assert header == "path,node,t,x_1,x_2,discount,killing,flag"

    def test_sweep(self, tmp_path):
        """Test a sweep over points and start times."""
        document = cir_document(points=[[0.05], [0.09]], times=[0.0, 0.5])
        code, report = run_cli(tmp_path, "price", document, "sim.n_paths=200")
        assert code == 0
        assert len(report["sweep"]) == 4
        assert os.path.exists(report["artifacts"]["sweep"])
        validate(report, "price")

    def test_obstacle_rejected(self, tmp_path):
        """Test that obstacle problems are routed to exercise."""
        code, report = run_cli(tmp_path, "price", put_document())
        assert code == 2
        assert report["category"] == "config"
        assert report["detail"]["field"] == "problem.kind"

    def test_deterministic(self, tmp_path):
        """Test that two runs with one seed print the same report."""
        reports = [run_cli(tmp_path, "price", heston_price_document())[1] for _ in range(2)]
        first, second = (strip_timestamp(json.dumps(r)) for r in reports)
        assert first == second


class TestOracleAndCompare:
    """Tests for the oracle and compare subcommands."""

    def test_oracle(self, tmp_path):
        """Test the CIR conditional mean and the grid CSV."""
        code, report = run_cli(tmp_path, "oracle", cir_document())
        assert code == 0
        assert report["values"][0]["u"] == pytest.approx(0.09 * 0.951229, abs=5e-3)
        assert report["solution"]["time_steps"] == 50
        with open(report["artifacts"]["grid"], encoding="utf-8") as handle:
            assert handle.readline().startswith("t,x_1,node,u")
        validate(report, "oracle")

    def test_compare(self, tmp_path):
        """Test that Monte Carlo agrees with the oracle."""
        code, report = run_cli(tmp_path, "compare", cir_document())
        assert code == 0
        assert report["passed"] is True
        assert report["rows"][0]["diff"] <= report["rows"][0]["tolerance"]
        validate(report, "compare")


class TestExercise:
    """Tests for the exercise subcommand."""

    def test_pde_policy(self, tmp_path):
        """Test the oracle-derived policy of the American put."""
        code, report = run_cli(tmp_path, "exercise", put_document())
        assert code == 0
        assert report["method"] == "pde"
        assert report["value_low"] == pytest.approx(0.0609, abs=5e-3)
        assert report["n_paths"] == 0
        assert report["policy"]["kind"] == "region"
        assert report["boundary"]
        assert os.path.exists(report["artifacts"]["boundary"])
        validate(report, "exercise")

    def test_needs_obstacle(self, tmp_path):
        """Test that boundary-value problems are rejected."""
        code, report = run_cli(tmp_path, "exercise", cir_document())
        assert code == 2
        assert report["category"] == "config"


class TestErrors:
    """Tests for error reports and exit codes."""

    def test_unknown_preset(self, tmp_path):
        """Test exit code 2 for an unknown preset."""
        code, report = run_cli(tmp_path, "classify", {"model": {"preset": "sabr3"}})
        assert code == 2
        assert report["status"] == "error"
        assert report["category"] == "model/unknown-preset"
        validate(report, "error")

    def test_bad_json(self, tmp_path):
        """Test exit code 2 for a malformed config file."""
        path = tmp_path / "run.json"
        path.write_text("{", encoding="utf-8")
        out = io.StringIO()
        code = cli.run("classify", str(path), stdout=out)
        report = json.loads(out.getvalue())
        assert code == 2
        assert report["category"] == "config"
        assert "line" in report["detail"]

    def test_numerical_failure(self, tmp_path, monkeypatch):
        """Test that numerical failures map to exit code 3."""
        def coarse(ctx):
            raise GridTooCoarse("free boundary moved by more than two cells under refinement", cell=0.1)

        monkeypatch.setitem(cli.HANDLERS, "exercise", coarse)
        code, report = run_cli(tmp_path, "exercise", put_document())
        assert code == 3
        assert report["category"] == "stopping/grid-too-coarse"
        assert report["detail"] == {"cell": 0.1}
        validate(report, "error")

    def test_internal_error(self, tmp_path, monkeypatch):
        """Test that unexpected exceptions map to exit code 1 without a traceback."""
        def boom(ctx):
            raise RuntimeError("kaput")

        monkeypatch.setitem(cli.HANDLERS, "classify", boom)
        code, report = run_cli(tmp_path, "classify", {"model": {"preset": "gbm1d", "params": {}}})
        assert code == 1
        assert report["category"] == "internal"
        assert report["detail"] == {"type": "RuntimeError"}
        assert "kaput" not in json.dumps(report)

    def test_unknown_subcommand(self, tmp_path):
        """Test that run rejects unknown subcommands."""
        code, report = run_cli(tmp_path, "simulate", {"model": {"preset": "gbm1d"}})
        assert code == 2
        assert report["detail"]["field"] == "subcommand"


class TestEntryPoint:
    """Tests for main and the metrics textfile."""

    def test_main(self, tmp_path, capsys):
        """Test argument parsing and the report on stdout."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"model": {"preset": "gbm1d", "params": {"mu": 0.05, "sigma": 0.2}}}),
                        encoding="utf-8")
        code = cli.main(["classify", str(path), "--set", "probe_b=0.25", "--output-dir", str(tmp_path / "out")])
        report = json.loads(capsys.readouterr().out)
        assert code == 0
        assert report["probe_b"] == 0.25

    def test_metrics_file(self, tmp_path):
        """Test the prometheus textfile."""
        target = tmp_path / "fkdegen.prom"
        document = {"model": {"preset": "gbm1d", "params": {"mu": 0.05, "sigma": 0.2}}}
        code, _ = run_cli(tmp_path, "classify", document, metrics_file=str(target))
        assert code == 0
        assert "fkdegen_runs_total" in target.read_text(encoding="utf-8")
