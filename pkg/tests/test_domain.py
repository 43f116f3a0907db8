"""
Tests for box domains and their faces.
"""
import numpy as np
import pytest

from fkdegen.domain import DomainSpec, Face
from fkdegen.errors import ConfigError


class TestDomainSpec:
    """Tests for domain construction."""

    def test_lower_degenerate_bound_fixed(self):
        """Test that the degenerate coordinate must start at 0."""
        with pytest.raises(ConfigError) as info:
            DomainSpec.box([-1.0, 0.1], [1.0, 1.0])
        assert info.value.detail["field"] == "domain.lower"

    def test_inverted_bounds(self):
        """Test that lower < upper is required."""
        with pytest.raises(ConfigError):
            DomainSpec.box([1.0, 0.0], [-1.0, 1.0])

    def test_half_space(self):
        """Test the half-space has no Gamma1."""
        domain = DomainSpec.half_space(2)
        assert domain.d == 2
        assert domain.gamma1_empty
        assert domain.gamma0_nonempty
        assert domain.default_probe_b() == 1.0

    def test_box_faces(self, heston_box):
        """Test the Gamma1 faces of a box."""
        faces = heston_box.gamma1_faces()
        assert faces == [Face(0, -1.0, False), Face(0, 1.0, True), Face(1, 0.5, True)]
        assert heston_box.smallest_extent() == pytest.approx(0.5)
        assert heston_box.default_probe_b() == pytest.approx(0.25)


class TestMembership:
    """Tests for interior, Gamma0 and Gamma1 membership."""

    def test_contains(self, heston_box):
        """Test open-box membership."""
        pts = np.array([[0.0, 0.25], [0.0, 0.0], [1.0, 0.25]])
        np.testing.assert_array_equal(heston_box.contains(pts), [True, False, False])

    def test_gamma0(self, heston_box):
        """Test that Gamma0 excludes its corners."""
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1e-12]])
        np.testing.assert_array_equal(heston_box.on_gamma0(pts, tol=1e-10), [True, False, True])

    def test_gamma1(self, heston_box):
        """Test that Gamma1 is closed away from the degenerate face."""
        pts = np.array([[1.0, 0.25], [0.0, 0.5], [1.0, 0.0], [0.0, 0.25]])
        np.testing.assert_array_equal(heston_box.on_gamma1(pts), [True, True, False, False])


class TestCrossings:
    """Tests for step-segment crossings."""

    def test_first_crossing(self, heston_box):
        """Test that the earliest face along the segment wins."""
        prev = np.array([[0.5, 0.25], [0.0, 0.25], [0.0, 0.25]])
        new = np.array([[1.5, 0.25], [0.0, 0.75], [0.1, 0.3]])
        frac, which = heston_box.first_gamma1_crossing(prev, new)
        assert frac[0] == pytest.approx(0.5)
        assert which[0] == 1
        assert frac[1] == pytest.approx(0.5)
        assert which[1] == 2
        assert np.isinf(frac[2])
        assert which[2] == -1

    def test_project_to_face(self, heston_box):
        """Test that exit points are placed on their face."""
        pts = np.array([[1.01, 0.2]])
        out = heston_box.project_to_face(pts, np.array([1]))
        np.testing.assert_allclose(out, [[1.0, 0.2]])


class TestSampling:
    """Tests for truncation and sampling."""

    def test_truncated(self):
        """Test far-field faces of the truncated half-space."""
        box, far = DomainSpec.half_space(2).truncated(4.0)
        assert box.lower == (-4.0, 0.0)
        assert box.upper == (4.0, 4.0)
        assert len(far) == 3

    def test_sample_boundary(self, heston_box):
        """Test boundary samples lie on the faces."""
        pts = heston_box.sample_boundary(8, include_gamma0=True)
        assert pts.shape == (32, 2)
        on_face = heston_box.on_gamma1(pts) | heston_box.on_gamma0(pts)
        assert np.all(on_face)

    def test_sample_interior(self, heston_box):
        """Test interior samples stay inside."""
        pts = heston_box.sample_interior(5)
        assert pts.shape == (25, 2)
        assert np.all(heston_box.contains(pts))
