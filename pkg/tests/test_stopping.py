"""
Tests for least-squares Monte Carlo and oracle-derived stopping policies.
"""
import numpy as np
import pytest

from fkdegen.errors import ConfigError, GridTooCoarse, OutOfRange, RegressionIllConditioned
from fkdegen.fk_estimate import ProblemSpec, j_functional
from fkdegen.pde_oracle import OracleConfig, solve_obstacle
from fkdegen.simulate import SimConfig
from fkdegen.stopping import (
    StoppingPolicy,
    default_degree,
    elliptic_obstacle_value,
    exercise_boundary,
    exercise_nodes,
    lsmc_value,
    monomial_exponents,
    policy_from_pde,
    regress,
)

from tests.conftest import put_payoff, scalar

AMERICAN_PUT = 0.0609


def american_put_spec():
    return ProblemSpec(kind="parabolic_obstacle", g=put_payoff(domain="boundary"), psi=put_payoff(), T=1.0)


def perpetual_put_spec():
    return ProblemSpec(kind="elliptic_obstacle", g=put_payoff(domain="boundary"), psi=put_payoff())


class TestRegressionBasis:
    """Tests for the polynomial basis and its fit."""

    def test_exponents(self):
        """Test the monomials of total degree two in two variables."""
        exps = monomial_exponents(2, 2)
        assert exps.shape == (6, 2)
        assert exps[0].tolist() == [0, 0]
        assert {tuple(e) for e in exps} == {(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)}

    def test_default_degree(self):
        """Test the default basis degree per dimension."""
        assert default_degree(1) == 5
        assert default_degree(2) == 3

    def test_exact_fit(self):
        """Test that a quadratic target is recovered."""
        states = np.linspace(0.0, 2.0, 50)[:, None]
        target = 1.0 - 2.0 * states[:, 0] + 0.5 * states[:, 0] ** 2
        basis, coef = regress(states, target, 2)
        np.testing.assert_allclose(basis.design(states) @ coef, target, atol=1e-10)

    def test_too_few_samples(self):
        """Test that a basis larger than half the sample is refused."""
        with pytest.raises(RegressionIllConditioned) as info:
            regress(np.linspace(0.1, 0.5, 5)[:, None], np.ones(5), 5)
        assert info.value.category == "stopping/regression"
        assert info.value.exit_code == 3

    def test_exercise_nodes(self):
        """Test that exercise dates avoid the two ends of the grid."""
        assert exercise_nodes(100, 50) == list(range(2, 100, 2))
        with pytest.raises(ConfigError):
            exercise_nodes(100, 0)


class TestPolicies:
    """Tests for policy construction."""

    def test_unknown_kind(self):
        """Test that unknown kinds are rejected."""
        with pytest.raises(ConfigError):
            StoppingPolicy("sometimes")

    def test_region_needs_region(self):
        """Test that region policies need a continuation region."""
        with pytest.raises(ConfigError):
            StoppingPolicy("region")

    def test_regression_needs_psi(self):
        """Test that regression policies need psi."""
        with pytest.raises(ConfigError):
            StoppingPolicy("regression")

    def test_stop_rules(self):
        """Test the immediate and never rules."""
        states = np.zeros((4, 1))
        assert StoppingPolicy("never").as_stop_rule() is None
        assert StoppingPolicy("immediate").as_stop_rule()(0.0, states, 0).all()

    def test_negative_obstacle_never_stops(self, gbm, half_line):
        """Test that an obstacle below the solution gives a never policy."""
        spec = ProblemSpec(kind="elliptic_obstacle", g=put_payoff(domain="boundary"), psi=scalar(-1.0, "interior"))
        solution = solve_obstacle(gbm, half_line, spec, config=OracleConfig(points_per_axis=41))
        policy = policy_from_pde(solution, spec.psi)
        assert policy.kind == "never"
        assert exercise_boundary(policy) == []


class TestOraclePolicies:
    """Tests for policies read off obstacle solutions."""

    def test_refinement_check(self, gbm, half_line):
        """Test that a stable free boundary passes the refinement check."""
        spec = perpetual_put_spec()
        config = OracleConfig(points_per_axis=81, obstacle_method="policy")
        coarse = solve_obstacle(gbm, half_line, spec, config=config)
        fine = solve_obstacle(gbm, half_line, spec, grid=coarse.grid.refine(), config=config)
        policy = policy_from_pde(coarse, spec.psi, refined=fine)
        assert policy.kind == "region"
        assert 0.0 < policy.summary()["continuation_fraction"] < 1.0
        level, location = exercise_boundary(policy)[0]
        assert level == 0.0
        assert location == pytest.approx(2.5 / 3.5, abs=0.06)

    def test_refinement_mismatch(self, gbm, half_line):
        """Test that a boundary seen on one grid only is reported."""
        spec = perpetual_put_spec()
        config = OracleConfig(points_per_axis=41, obstacle_method="policy")
        coarse = solve_obstacle(gbm, half_line, spec, config=config)
        never = ProblemSpec(kind="elliptic_obstacle", g=put_payoff(domain="boundary"), psi=scalar(-1.0, "interior"))
        fine = solve_obstacle(gbm, half_line, never, grid=coarse.grid.refine(), config=config)
        with pytest.raises(GridTooCoarse):
            policy_from_pde(coarse, spec.psi, refined=fine)

    def test_region_policy_value(self, gbm, half_line):
        """Test that J under the oracle's policy matches the American put."""
        spec = american_put_spec()
        config = OracleConfig(points_per_axis=161, obstacle_method="policy", time_steps=200)
        solution = solve_obstacle(gbm, half_line, spec, config=config)
        policy = policy_from_pde(solution, spec.psi)
        assert exercise_boundary(policy)
        sim = SimConfig(dt=0.01, t_max=1.0, n_paths=10000, seed=5)
        estimate = j_functional(gbm, half_line, spec, [1.0], policy, sim, t=0.0)
        assert AMERICAN_PUT - 0.005 <= estimate.mean <= AMERICAN_PUT + 3.0 * estimate.stderr + 0.002
        assert estimate.diagnostics.stop_rate > 0.0


class TestLsmc:
    """Tests for least-squares Monte Carlo."""

    def test_needs_parabolic_obstacle(self, gbm, half_line):
        """Test that other problem kinds are rejected."""
        spec = ProblemSpec(kind="parabolic_bvp", g=put_payoff(domain="boundary"), T=1.0)
        with pytest.raises(ConfigError):
            lsmc_value(gbm, half_line, spec, 0.0, [1.0], SimConfig(dt=0.01, t_max=1.0, n_paths=100))

    def test_start_time_range(self, gbm, half_line):
        """Test that t outside [0, T] is rejected."""
        with pytest.raises(OutOfRange):
            lsmc_value(gbm, half_line, american_put_spec(), 1.5, [1.0], SimConfig(dt=0.01, t_max=1.0, n_paths=100))

    def test_american_put(self, gbm, half_line):
        """Test the low-biased LSMC value of the American put."""
        config = SimConfig(dt=0.01, t_max=1.0, n_paths=20000, seed=11)
        result = lsmc_value(gbm, half_line, american_put_spec(), 0.0, [1.0], config)
        estimate, policy = result
        assert AMERICAN_PUT - 0.005 <= estimate.mean <= AMERICAN_PUT + 3.0 * estimate.stderr + 0.002
        assert result.value_high >= estimate.mean - 3.0 * estimate.stderr
        assert policy.kind == "regression"
        assert 1 <= policy.summary()["basis_degree"] <= 5
        assert result.n_exercise == 49
        locations = [loc for _, loc in exercise_boundary(policy)]
        assert locations
        assert 0.6 < float(np.median(locations)) < 1.0

    def test_in_the_money_start_stops(self, gbm, half_line):
        """Test that a deep in-the-money start exercises at once."""
        config = SimConfig(dt=0.01, t_max=1.0, n_paths=2000, seed=11)
        estimate, policy = lsmc_value(gbm, half_line, american_put_spec(), 0.0, [0.3], config)
        assert policy.kind == "immediate"
        assert estimate.mean == pytest.approx(0.7)

    def test_perpetual_put(self, gbm, half_line):
        """Test the horizon-truncated perpetual put."""
        config = SimConfig(dt=0.02, t_max=20.0, n_paths=5000, seed=4)
        result = elliptic_obstacle_value(gbm, half_line, perpetual_put_spec(), [1.0], config)
        assert 0.085 <= result.estimate.mean <= 0.13
        assert result.estimate.truncation_bias_bound is None
