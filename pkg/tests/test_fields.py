"""
Tests for the coefficient and data catalog.
"""
import numpy as np
import pytest

from fkdegen.errors import AssumptionViolation, ConfigError
from fkdegen.fields import (
    Affine,
    CallableField,
    Constant,
    Exponential,
    Payoff,
    Power,
    ScalarField,
    TimeExponential,
    as_points,
    field_from_config,
    scalar_field_from_config,
)


POINTS = np.array([[0.3, 0.4], [-0.7, 1.2], [1.5, 0.05]])


class TestEvaluation:
    """Tests for vectorised evaluation."""

    def test_single_point_becomes_one_row(self):
        """Test that a 1-D point is treated as one row."""
        assert as_points([1.0, 2.0]).shape == (1, 2)
        assert Constant(2.0)([1.0, 2.0]).shape == (1,)

    def test_affine_values(self):
        """Test affine evaluation with missing trailing weights."""
        f = Affine(1.0, (2.0,))
        np.testing.assert_allclose(f(POINTS), 1.0 + 2.0 * POINTS[:, 0])

    def test_payoff_put_and_call(self):
        """Test put and call payoffs on the first coordinate."""
        x = np.array([[0.5], [1.5]])
        np.testing.assert_allclose(Payoff(0, 1.0, "put")(x), [0.5, 0.0])
        np.testing.assert_allclose(Payoff(0, 1.0, "call")(x), [0.0, 0.5])

    def test_payoff_unknown_option(self):
        """Test that an unknown payoff option is a config error."""
        with pytest.raises(ConfigError):
            Payoff(0, 1.0, "straddle")

    def test_time_exponential(self):
        """Test time-dependent evaluation and derivative."""
        f = TimeExponential(rate=-0.5, coef=2.0, anchor=1.0)
        assert f.time_dependent
        assert f([0.0], t=1.0)[0] == pytest.approx(2.0)
        assert f.time_derivative([0.0], 1.0)[0] == pytest.approx(-1.0)

    def test_composites(self):
        """Test sums and products built with operators."""
        f = Constant(1.0) + Power(-1, 2.0)
        g = Affine(0.0, (1.0,)) * Exponential(-1, 1.0)
        np.testing.assert_allclose(f(POINTS), 1.0 + POINTS[:, 1] ** 2)
        np.testing.assert_allclose(g(POINTS), POINTS[:, 0] * np.exp(POINTS[:, 1]))

    def test_smoothness(self):
        """Test that payoff kinks propagate through composites."""
        assert Constant(1.0).smooth
        assert not Payoff(0, 1.0, "put").smooth
        assert not (Constant(1.0) + Payoff(0, 1.0, "put")).smooth
        assert (Affine(0.0, (1.0,)) * Exponential(-1, 1.0)).smooth
        assert not ScalarField(Payoff(0, 1.0, "call")).smooth


class TestDerivatives:
    """Tests that analytic derivatives agree with central differences."""

    @pytest.mark.parametrize("field", [
        Affine(0.5, (1.0, -2.0)),
        Power(-1, 2.0, 3.0),
        Power(0, 3.0, 1.0, 0.1),
        Exponential(-1, 1.5),
        Constant(1.0) + Power(-1, 2.0),
        Affine(0.0, (1.0,)) * Exponential(-1, 1.0),
    ])
    def test_gradient_and_hessian(self, field):
        """Test analytic gradient and Hessian against finite differences."""
        assert field.analytic_derivatives
        np.testing.assert_allclose(field.gradient(POINTS), field.fd_gradient(POINTS), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(field.hessian(POINTS), field.fd_hessian(POINTS), rtol=1e-4, atol=1e-5)

    def test_callable_field_uses_differences(self):
        """Test that wrapped callables fall back to finite differences."""
        f = CallableField(lambda x, t: x[:, 0] ** 2 * x[:, 1], name="x2y")
        assert not f.analytic_derivatives
        np.testing.assert_allclose(f.gradient([[1.0, 2.0]]), [[4.0, 1.0]], rtol=1e-6)


class TestCatalog:
    """Tests for building fields from their catalog description."""

    def test_number_is_constant(self):
        """Test that a bare number is a constant field."""
        assert field_from_config(0.25) == Constant(0.25)

    @pytest.mark.parametrize("field", [
        Constant(2.0),
        Affine(0.1, (1.0, -0.5)),
        Power(-1, 0.5, 2.0, 0.0),
        Payoff(0, 1.2, "call", 2.0),
        Exponential(0, -1.0, 3.0),
        TimeExponential(0.05, 1.0, 1.0),
        Constant(1.0) + Power(-1, 2.0),
    ])
    def test_to_config_rebuilds(self, field):
        """Test that to_config describes an equal field."""
        assert field_from_config(field.to_config()) == field

    def test_unknown_kind(self):
        """Test that an unknown kind is rejected."""
        with pytest.raises(ConfigError) as info:
            field_from_config({"kind": "spline"})
        assert "spline" in info.value.message

    def test_missing_key(self):
        """Test that a missing required key is a config error."""
        with pytest.raises(ConfigError):
            field_from_config({"kind": "payoff", "option": "put"})

    def test_generator_needs_model(self):
        """Test that generator fields need a model to resolve."""
        with pytest.raises(ConfigError):
            field_from_config({"kind": "generator", "of": 1.0})

    def test_callable_cannot_serialise(self):
        """Test that callables are not part of the catalog."""
        with pytest.raises(ConfigError):
            CallableField(lambda x, t: x[:, 0]).to_config()


class TestScalarField:
    """Tests for data fields with growth constants and domain tags."""

    def test_unknown_domain_tag(self):
        """Test that unknown domain tags are rejected."""
        with pytest.raises(ConfigError):
            ScalarField(Constant(1.0), 1.0, "everywhere")

    def test_gamma0_coverage(self):
        """Test which tags cover the degenerate face."""
        assert ScalarField(Constant(1.0), 1.0, "boundary").covers_gamma0
        assert ScalarField(Constant(1.0), 1.0, "interior").covers_gamma0
        assert not ScalarField(Constant(1.0), 1.0, "gamma1").covers_gamma0
        assert not ScalarField(Constant(1.0), 1.0, "parabolic_gamma1").covers_gamma0

    def test_growth_within_bound(self):
        """Test that the worst ratio is returned when the bound holds."""
        f = ScalarField(Affine(1.0, (1.0,)), 1.0)
        worst = f.check_growth(np.array([[0.0], [1.0], [3.0]]), name="f")
        assert worst == pytest.approx(1.0)

    def test_growth_violation(self):
        """Test that exceeding the growth bound names the field."""
        f = ScalarField(Power(0, 2.0), 1.0)
        with pytest.raises(AssumptionViolation) as info:
            f.check_growth(np.array([[0.5], [4.0]]), name="f")
        assert info.value.category == "model/f-growth"
        assert info.value.where == [4.0]

    def test_from_config_wrapper(self):
        """Test the {"field", "growth_K", "domain"} wrapper."""
        f = scalar_field_from_config({"field": {"kind": "constant", "value": 2.0}, "growth_K": 3.0,
                                      "domain": "gamma1"})
        assert f.growth_K == 3.0
        assert f.domain == "gamma1"
        bare = scalar_field_from_config(1.0, default_domain="interior")
        assert bare.domain == "interior"
