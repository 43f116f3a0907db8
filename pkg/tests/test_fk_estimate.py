"""
Tests for Monte Carlo Feynman-Kac estimators.
"""
import math

import numpy as np
import pytest

from fkdegen.domain import DomainSpec
from fkdegen.errors import AssumptionViolation, BoundaryDataMissing, CompatibilityError, ConfigError, OutOfRange
from fkdegen.fields import Affine, Constant, Exponential, Power, ScalarField
from fkdegen.fk_estimate import (
    ProblemSpec,
    default_horizon,
    estimate_elliptic,
    estimate_parabolic,
    j_functional,
    mean_stderr,
    price_sweep,
    scenario_for,
    truncation_bias,
)
from fkdegen.model import GeneratorField, gbm1d
from fkdegen.simulate import SimConfig

from tests.conftest import put_payoff, scalar


def cir_mean(x, kappa=2.0, theta=0.09, r=0.05, T=1.0):
    return math.exp(-r * T) * (theta + (x - theta) * math.exp(-kappa * T))


class TestProblemSpec:
    """Tests for problem data checks."""

    def test_missing_boundary_data(self):
        """Test that g is required."""
        with pytest.raises(CompatibilityError) as info:
            ProblemSpec(kind="elliptic_bvp")
        assert info.value.category == "compatibility/missing-field"

    def test_obstacle_needs_psi(self):
        """Test that obstacle problems need psi."""
        with pytest.raises(CompatibilityError):
            ProblemSpec(kind="elliptic_obstacle", g=scalar(0.0))

    def test_parabolic_needs_horizon(self):
        """Test that parabolic problems need T."""
        with pytest.raises(ConfigError):
            ProblemSpec(kind="parabolic_bvp", g=scalar(1.0))

    def test_unknown_kind(self):
        """Test that unknown kinds are rejected."""
        with pytest.raises(ConfigError):
            ProblemSpec(kind="hyperbolic", g=scalar(1.0))

    def test_full_mode_needs_gamma0_data(self, cir_regular, unit_interval):
        """Test that tau-exits in scenario B need g on the degenerate face."""
        spec = ProblemSpec(kind="elliptic_bvp", g=scalar(1.0, domain="gamma1"))
        with pytest.raises(CompatibilityError) as info:
            spec.resolve(cir_regular, unit_interval, "B")
        assert info.value.category == "compatibility/boundary-data"

    def test_modes(self, cir_regular, unit_interval):
        """Test the boundary mode for each variant and scenario."""
        spec = ProblemSpec(kind="elliptic_bvp", g=scalar(1.0))
        assert spec.resolve(cir_regular, unit_interval, "B").boundary_mode == "full"
        assert spec.resolve(cir_regular, unit_interval, "A").boundary_mode == "partial"
        lam = ProblemSpec(kind="elliptic_bvp", variant="lambda", g=scalar(1.0, domain="gamma1"))
        assert lam.resolve(cir_regular, unit_interval, "B").boundary_mode == "partial"

    def test_obstacle_above_boundary_data(self, cir_regular, unit_interval):
        """Test that psi <= g is required on the boundary."""
        spec = ProblemSpec(kind="elliptic_obstacle", g=scalar(1.0), psi=scalar(2.0, domain="interior", growth_K=2.0))
        with pytest.raises(CompatibilityError) as info:
            spec.resolve(cir_regular, unit_interval, "B")
        assert info.value.category == "compatibility/obstacle"

    def test_growth_violation(self, gbm, half_line):
        """Test that data growth beyond K is reported for the named field."""
        spec = ProblemSpec(kind="elliptic_bvp", f=ScalarField(Power(0, 2.0), 1.0, "interior"), g=scalar(0.0))
        with pytest.raises(AssumptionViolation) as info:
            spec.resolve(gbm, half_line, "A")
        assert info.value.category == "model/f-growth"


class TestHelpers:
    """Tests for statistics and horizon helpers."""

    def test_mean_stderr(self):
        """Test plain and antithetic standard errors."""
        mean, stderr = mean_stderr(np.array([1.0, 3.0, 2.0, 2.0]))
        assert mean == 2.0
        assert stderr == pytest.approx(math.sqrt(2.0 / 3.0) / 2.0)
        mean, stderr = mean_stderr(np.array([1.0, 3.0, 2.0, 2.0]), antithetic=True)
        assert (mean, stderr) == (2.0, 0.0)

    def test_default_horizon(self, gbm, half_line):
        """Test 10 / c0 on the half-line."""
        assert default_horizon(gbm, half_line, [1.0]) == pytest.approx(200.0)

    def test_truncation_bias(self, half_line):
        """Test that the bias bound decays with the horizon."""
        model = gbm1d(mu=0.05, sigma=0.2, killing=0.2)
        spec = ProblemSpec(kind="elliptic_bvp", g=scalar(0.0))
        short = truncation_bias(model, spec, [1.0], 5.0)
        long = truncation_bias(model, spec, [1.0], 20.0)
        assert long < short
        assert long == pytest.approx(short * math.exp(-0.2 * 15.0))

    def test_truncation_bias_unavailable(self, gbm):
        """Test that no bound is given when the condition fails."""
        spec = ProblemSpec(kind="elliptic_bvp", g=scalar(0.0))
        assert truncation_bias(gbm, spec, [1.0], 5.0) is None

    def test_scenarios(self, heston_b, heston_box, cir_regular, unit_interval):
        """Test scenario lookup through the domain's probe point."""
        assert scenario_for(heston_b, heston_box) == "A"
        assert scenario_for(cir_regular, unit_interval) == "B"


class TestParabolic:
    """Tests for parabolic estimates."""

    def test_telescoping(self, heston_b, heston_box):
        """Test f = c and g = 1 give u = 1 up to quadrature error."""
        spec = ProblemSpec(kind="parabolic_bvp", f=scalar(0.05, domain="interior"), g=scalar(1.0), T=0.5)
        est = estimate_parabolic(heston_b, heston_box, spec, 0.0, [0.0, 0.09],
                                 SimConfig(dt=0.01, t_max=0.5, n_paths=2000, seed=3))
        assert est.mean == pytest.approx(1.0, abs=1e-5)
        assert est.diagnostics.scenario == "A"

    @pytest.mark.parametrize("x0", [0.04, 0.09, 0.25])
    def test_cir_conditional_mean(self, cir_feller, half_line, x0):
        """Test the closed-form discounted CIR mean."""
        spec = ProblemSpec(kind="parabolic_bvp", g=scalar(Affine(0.0, (1.0,))), T=1.0)
        est = estimate_parabolic(cir_feller, half_line, spec, 0.0, [x0],
                                 SimConfig(dt=0.01, t_max=1.0, n_paths=4000, seed=11))
        assert abs(est.mean - cir_mean(x0)) <= 3.0 * est.stderr + 1e-3

    def test_terminal_time(self, cir_feller, half_line):
        """Test that t = T returns the terminal data."""
        spec = ProblemSpec(kind="parabolic_bvp", g=scalar(Affine(0.0, (1.0,))), T=1.0)
        est = estimate_parabolic(cir_feller, half_line, spec, 1.0, [0.3], SimConfig())
        assert est.mean == pytest.approx(0.3)
        assert est.n_paths == 0

    def test_start_time_range(self, cir_feller, half_line):
        """Test that t outside [0, T] is rejected."""
        spec = ProblemSpec(kind="parabolic_bvp", g=scalar(1.0), T=1.0)
        with pytest.raises(OutOfRange):
            estimate_parabolic(cir_feller, half_line, spec, 1.5, [0.3], SimConfig())

    def test_variants_agree_in_scenario_a(self, heston_b, heston_box):
        """Test that tau and lambda agree when the origin is unattainable."""
        g = ScalarField(Exponential(0, 1.0), 2.0, "boundary")
        config = SimConfig(dt=0.01, t_max=0.5, n_paths=4000, seed=5)
        results = []
        for variant in ("tau", "lambda"):
            spec = ProblemSpec(kind="parabolic_bvp", variant=variant, g=g, T=0.5)
            results.append(estimate_parabolic(heston_b, heston_box, spec, 0.0, [0.0, 0.09], config))
        tau, lam = results
        assert tau.diagnostics.gamma0_touch_rate == 0.0
        assert abs(tau.mean - lam.mean) <= 2.0 * math.hypot(tau.stderr, lam.stderr) + 1e-12

    def test_sweep(self, cir_feller, half_line):
        """Test that a sweep covers every start time and point."""
        spec = ProblemSpec(kind="parabolic_bvp", g=scalar(Affine(0.0, (1.0,))), T=1.0)
        rows = price_sweep(cir_feller, half_line, spec, [[0.04], [0.09]],
                           SimConfig(dt=0.05, t_max=1.0, n_paths=200), times=[0.0, 0.5])
        assert [r.point_id for r in rows] == [0, 1, 2, 3]
        assert [r.t for r in rows] == [0.0, 0.0, 0.5, 0.5]
        assert rows[1].x == [0.09]


class TestElliptic:
    """Tests for elliptic estimates."""

    def test_telescoping_scenario_b(self, cir_regular, unit_interval):
        """Test u = 1 with paths exiting through the degenerate face."""
        spec = ProblemSpec(kind="elliptic_bvp", f=scalar(0.05, domain="interior"), g=scalar(1.0))
        est = estimate_elliptic(cir_regular, unit_interval, spec, [0.3],
                                SimConfig(dt=0.01, t_max=20.0, n_paths=2000, seed=2))
        assert est.diagnostics.scenario == "B"
        assert est.diagnostics.gamma0_touch_rate > 0.0
        assert est.stderr < 1e-3
        assert abs(est.mean - 1.0) <= 3.0 * est.stderr + 1e-4

    def test_manufactured_solution(self, heston_b_fast):
        """Test u = 1 + v^2 with f = A u on a box."""
        u = Constant(1.0) + Power(-1, 2.0)
        domain = DomainSpec.box([-2.0, 0.0], [2.0, 2.0])
        spec = ProblemSpec(kind="elliptic_bvp", f=ScalarField(GeneratorField(heston_b_fast, u), 10.0, "interior"),
                           g=ScalarField(u, 10.0, "boundary"))
        est = estimate_elliptic(heston_b_fast, domain, spec, [0.0, 0.25],
                                SimConfig(dt=0.01, t_max=5.0, n_paths=4000, seed=4))
        assert abs(est.mean - 1.0625) <= 3.0 * est.stderr + 0.01

    def test_start_on_gamma0_needs_full_mode(self, heston_b, heston_box):
        """Test that Gamma0 starts are rejected in scenario A."""
        spec = ProblemSpec(kind="elliptic_bvp", g=scalar(1.0))
        with pytest.raises(OutOfRange):
            estimate_elliptic(heston_b, heston_box, spec, [0.0, 0.0], SimConfig(dt=0.01, t_max=1.0))

    def test_forced_scenario_surfaces_missing_data(self, cir_regular, unit_interval):
        """Test that a Gamma0 exit without data there is an error, not a silent zero."""
        spec = ProblemSpec(kind="elliptic_bvp", g=scalar(1.0, domain="gamma1"))
        with pytest.raises(BoundaryDataMissing):
            estimate_elliptic(cir_regular, unit_interval, spec, [0.1],
                              SimConfig(dt=0.01, t_max=5.0, n_paths=500), scenario="A")


class TestJFunctional:
    """Tests for J under a given stopping rule."""

    def test_immediate_stop(self, gbm, half_line):
        """Test that stopping at once pays psi(x)."""
        spec = ProblemSpec(kind="parabolic_obstacle", g=put_payoff(domain="boundary"), psi=put_payoff(), T=1.0)
        config = SimConfig(dt=0.01, t_max=1.0, n_paths=200)
        est = j_functional(gbm, half_line, spec, [0.9], lambda t, s, node: np.ones(len(s), dtype=bool), config)
        assert est.mean == pytest.approx(0.1)
        assert est.stderr == 0.0
        assert est.diagnostics.stop_rate == 1.0

    def test_never_stop_matches_estimate(self, gbm, half_line):
        """Test that a never-stop rule reproduces the plain estimate."""
        spec = ProblemSpec(kind="parabolic_obstacle", g=put_payoff(domain="boundary"), psi=put_payoff(), T=1.0)
        config = SimConfig(dt=0.01, t_max=1.0, n_paths=500, seed=8)
        never = j_functional(gbm, half_line, spec, [1.0], lambda t, s, node: np.zeros(len(s), dtype=bool), config)
        plain = estimate_parabolic(gbm, half_line, spec, 0.0, [1.0], config)
        assert never.mean == plain.mean

    def test_needs_obstacle(self, gbm, half_line):
        """Test that J needs psi."""
        spec = ProblemSpec(kind="parabolic_bvp", g=scalar(1.0), T=1.0)
        with pytest.raises(CompatibilityError):
            j_functional(gbm, half_line, spec, [1.0], None, SimConfig())
