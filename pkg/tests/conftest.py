"""
Shared test fixtures and configuration.
"""
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Tuple

import pytest


# Set test environment variables before importing the package
os.environ["FKDEGEN_THREADS"] = "1"
os.environ["FKDEGEN_BATCH_SIZE"] = "2048"
os.environ["FKDEGEN_LOG_LEVEL"] = "WARNING"
os.environ["FKDEGEN_OUTPUT_DIR"] = os.path.join(tempfile.gettempdir(), "fkdegen-test-out")
os.environ["FKDEGEN_METRICS_PATH"] = ""


from fkdegen.cli import run
from fkdegen.domain import DomainSpec
from fkdegen.fields import Constant, Field, Payoff, ScalarField
from fkdegen.model import cev, cir1d, gbm1d, heston
from fkdegen.simulate import SimConfig


SCHEMA_DIR = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo acceptance checks")


@pytest.fixture
def heston_b():
    """Heston case (b): Feller condition holds, origin unattainable."""
    return heston(kappa=2.0, theta=0.09, sigma_v=0.3, rho=-0.5, r=0.05)


@pytest.fixture
def heston_b_fast():
    """Heston case (b) with a large killing rate, so short horizons suffice."""
    return heston(kappa=2.0, theta=0.09, sigma_v=0.3, rho=-0.5, r=0.05, killing=2.0)


@pytest.fixture
def heston_e():
    """Heston case (e): Feller condition fails, origin attainable."""
    return heston(kappa=1.0, theta=0.02, sigma_v=0.3, rho=-0.5, r=0.05)


@pytest.fixture
def cir_regular():
    """CIR with 2 kappa theta / sigma^2 = 0.4 (regular origin)."""
    return cir1d(kappa=1.0, theta=0.05, sigma=0.5)


@pytest.fixture
def cir_feller():
    """CIR of the closed-form conditional-mean problem."""
    return cir1d(kappa=2.0, theta=0.09, sigma=0.3, killing=0.05)


@pytest.fixture
def driftless():
    """dY = sqrt(Y) dW: scale density 1, exit boundary at 0."""
    return cev(mu=0.0, sigma=1.0, beta=1.0)


@pytest.fixture
def gbm():
    """Black-Scholes underlying discounted at r = 0.05."""
    return gbm1d(mu=0.05, sigma=0.2)


@pytest.fixture
def heston_box():
    return DomainSpec.box([-1.0, 0.0], [1.0, 0.5])


@pytest.fixture
def unit_interval():
    return DomainSpec.box([0.0], [1.0])


@pytest.fixture
def half_line():
    return DomainSpec.half_space(1)


@pytest.fixture
def small_sim():
    """A quick simulation config for smoke-level estimates."""
    return SimConfig(dt=0.01, t_max=1.0, n_paths=2000, seed=7)


def scalar(value: Any, domain: str = "boundary", growth_K: float = 1.0) -> ScalarField:
    """Wrap a number or catalog field as a data field."""
    evaluator = value if isinstance(value, Field) else Constant(float(value))
    return ScalarField(evaluator, growth_K, domain)


def put_payoff(strike: float = 1.0, domain: str = "interior") -> ScalarField:
    """Put payoff on the first coordinate."""
    return ScalarField(Payoff(index=0, strike=strike, option="put"), 1.0, domain)


def run_cli(tmp_path: Path, subcommand: str, document: Dict[str, Any], *overrides: str,
            **kwargs: Any) -> Tuple[int, Dict[str, Any]]:
    """Write a run config, run one subcommand and parse its report."""
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(document), encoding="utf-8")
    out = io.StringIO()
    kwargs.setdefault("output_dir", str(tmp_path / "out"))
    code = run(subcommand, str(config_path), list(overrides), stdout=out, **kwargs)
    return code, json.loads(out.getvalue())


def load_schema(name: str) -> Dict[str, Any]:
    """Load a published report schema."""
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text(encoding="utf-8"))
