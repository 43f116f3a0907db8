"""
Tests for the path simulator.
"""
import math

import numpy as np
import pydantic
import pytest

from fkdegen import simulate
from fkdegen.domain import DomainSpec
from fkdegen.errors import ConfigError, OutOfRange
from fkdegen.model import cev, cir1d, compute_M, gbm1d
from fkdegen.simulate import (
    FACE_GAMMA0,
    FACE_GAMMA1,
    FACE_HORIZON,
    PathEngine,
    SimConfig,
    bridge_increments,
    discount_weight,
    node_times,
    path_rng,
    run_paths,
    sample_paths,
    simulate_path,
    step,
    supermartingale_profile,
    trace_paths,
)


class TestSimConfig:
    """Tests for simulation controls."""

    def test_defaults(self):
        """Test default values."""
        config = SimConfig()
        assert config.dt == 1e-3
        assert config.boundary_tol == 1e-10
        assert config.substep_factor == 8

    def test_dt_exceeds_horizon(self):
        """Test that dt > t_max is rejected."""
        with pytest.raises(pydantic.ValidationError):
            SimConfig(dt=2.0, t_max=1.0)

    def test_odd_antithetic(self):
        """Test that antithetic sampling needs pairs."""
        with pytest.raises(pydantic.ValidationError):
            SimConfig(antithetic=True, n_paths=101)

    def test_unknown_key(self):
        """Test that unknown keys are rejected."""
        with pytest.raises(pydantic.ValidationError):
            SimConfig(steps=10)

    def test_boundary_tol_vs_extent(self, heston_box):
        """Test that boundary_tol must be small against the domain."""
        with pytest.raises(ConfigError):
            SimConfig(boundary_tol=0.01).check_domain(heston_box)
        SimConfig().check_domain(heston_box)

    def test_node_times(self):
        """Test that the last node lands on the horizon."""
        np.testing.assert_allclose(node_times(0.0, 1.0, 0.3), [0.0, 0.3, 0.6, 0.9, 1.0])


class TestStep:
    """Tests for one Euler step."""

    def test_gbm_step(self, gbm):
        """Test a step with a given increment."""
        x = step(gbm, [1.0], 0.01, [0.1])
        assert x[0] == pytest.approx(1.0 + 0.05 * 0.01 + 0.2 * 0.1)

    def test_full_truncation(self, heston_b):
        """Test that the degenerate coordinate is clamped at 0."""
        x = step(heston_b, [0.0, 0.01], 0.01, [-1.0, -1.0])
        assert x[1] == 0.0

    def test_streams(self):
        """Test that streams are reproducible and distinct."""
        a = path_rng(5, 0, 3).standard_normal(4)
        b = path_rng(5, 0, 3).standard_normal(4)
        c = path_rng(5, 1, 3).standard_normal(4)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)


class TestSinglePaths:
    """Tests for simulate_path and discount weights."""

    def test_deterministic_discount(self, gbm, half_line):
        """Test e^{-c s} along a frozen-noise path."""
        path = simulate_path(gbm, half_line, [1.0], 0.0, SimConfig(dt=0.01, t_max=1.0), deterministic=True)
        assert discount_weight(path, 0.5) == pytest.approx(math.exp(-0.05 * 0.5))
        assert discount_weight(path, 0.505) == pytest.approx(math.exp(-0.05 * 0.505))
        assert path.states[-1, 0] == pytest.approx(1.0005 ** 100)
        assert path.tau_exit.face == "horizon"

    def test_gamma1_exit(self):
        """Test the interpolated exit through the upper face."""
        model = gbm1d(mu=1.0, sigma=0.2)
        domain = DomainSpec.box([0.0], [1.5])
        path = simulate_path(model, domain, [1.0], 0.0, SimConfig(dt=0.01, t_max=1.0), deterministic=True)
        assert path.lambda_exit.face == "gamma1"
        assert path.lambda_exit.point == [1.5]
        assert path.lambda_exit.time == pytest.approx(0.4075, abs=1e-3)
        assert path.times[-1] == path.lambda_exit.time
        assert path.states[-1, 0] == 1.5
        assert path.tau_exit.time == path.lambda_exit.time

    def test_scheme_violation(self, half_line):
        """Test that a Gamma0 exit in scenario A is flagged."""
        model = cev(mu=-20.0, sigma=0.3, beta=1.0, killing=0.05)
        path = simulate_path(model, half_line, [0.5], 0.0, SimConfig(dt=0.1, t_max=1.0),
                             scenario="A", deterministic=True)
        assert path.tau_exit.face == "gamma0"
        assert path.scheme_violation
        assert path.gamma0_touches >= 1
        assert path.lambda_exit.face == "horizon"

    def test_start_outside(self, heston_b, heston_box):
        """Test that a start outside the closure is rejected."""
        with pytest.raises(OutOfRange):
            simulate_path(heston_b, heston_box, [2.0, 0.1], 0.0, SimConfig())

    def test_discount_out_of_range(self, gbm, half_line):
        """Test that times past the path are rejected."""
        path = simulate_path(gbm, half_line, [1.0], 0.0, SimConfig(dt=0.1, t_max=1.0), deterministic=True)
        with pytest.raises(OutOfRange):
            discount_weight(path, 2.0)


class TestBatches:
    """Tests for batched simulation."""

    def test_antithetic_pairs(self, gbm, half_line):
        """Test that paired increments cancel in the mean."""
        config = SimConfig(dt=0.01, t_max=0.1, n_paths=1000, antithetic=True)
        sample = sample_paths(gbm, half_line, [1.0], 0.0, 0.1, config, snapshot_times=[0.01])
        snap = sample.snapshots[1]
        assert np.mean(snap.states[:, 0]) == pytest.approx(1.0 + 0.05 * 0.01, rel=1e-12)
        assert snap.states[0, 0] - 1.0005 == pytest.approx(-(snap.states[1, 0] - 1.0005))

    def test_bridge_increments(self):
        """Test that sub-increments sum to the coarse increment and stay mirrored."""
        half = path_rng(3, 0, 0).standard_normal((3, 2)) * 0.1
        coarse = np.empty((6, 2))
        coarse[0::2] = half
        coarse[1::2] = -half
        rows = np.array([1, 2, 3, 4, 5])
        inc = bridge_increments(path_rng(3, 1, 0), coarse[rows], 8, 0.01, rows=rows, antithetic=True)
        assert inc.shape == (5, 8, 2)
        np.testing.assert_allclose(inc.sum(axis=1), coarse[rows], atol=1e-12)
        np.testing.assert_array_equal(inc[1], -inc[2])
        np.testing.assert_array_equal(inc[3], -inc[4])

    def test_bridge_variance(self):
        """Test the variance of bridge increments pinned at zero."""
        inc = bridge_increments(path_rng(5, 0, 0), np.zeros((20000, 1)), 4, 0.01)
        assert np.var(inc[:, 0, 0]) == pytest.approx(0.0025 * 0.75, rel=0.05)

    def test_near_boundary_pairs(self, heston_e, monkeypatch):
        """Test that antithetic pairs stay mirrored through near-boundary sub-steps."""
        config = SimConfig(dt=0.01, t_max=0.05, n_paths=64, seed=8, antithetic=True)
        totals = np.zeros((config.n_paths, heston_e.m))
        steps = []
        original = simulate._Batch._segment

        def recording(batch, idx, t, h, noise):
            totals[idx] += noise
            steps.append(h)
            original(batch, idx, t, h, noise)

        monkeypatch.setattr(simulate._Batch, "_segment", recording)
        engine = PathEngine(heston_e, DomainSpec.half_space(2), config, 0.0, 0.05)
        run_paths(engine, [0.0, 1e-6], config)
        assert min(steps) < config.dt
        np.testing.assert_allclose(totals[0::2], -totals[1::2], atol=1e-12)

    def test_bridge_exit(self, gbm):
        """Test that the bridge test adds Gamma1 exits between inside end points."""
        domain = DomainSpec.box([0.0], [1.1])
        exits = []
        for bridge in (False, True):
            config = SimConfig(dt=0.1, t_max=0.1, n_paths=2000, seed=4, bridge_exit=bridge)
            engine = PathEngine(gbm, domain, config, 0.0, 0.1, until="tau")
            sample = run_paths(engine, [1.0], config)
            exits.append(sample.tau.face == FACE_GAMMA1)
        assert np.all(exits[1][exits[0]])
        assert np.count_nonzero(exits[1]) > np.count_nonzero(exits[0])

    def test_scheme_violations(self, driftless, half_line):
        """Test that Gamma0 touches count as violations in scenario A only."""
        config = SimConfig(dt=0.01, t_max=0.5, n_paths=200, seed=2)
        engine = PathEngine(driftless, half_line, config, 0.0, 0.5)
        sample = run_paths(engine, [0.01], config)
        assert sample.scheme_violations("B") == 0
        assert sample.scheme_violations("A") == np.count_nonzero(sample.touches)
        assert sample.scheme_violations("A") > 0

    def test_thread_independence(self, heston_b, heston_box):
        """Test that results do not depend on the thread count."""
        single = SimConfig(dt=0.01, t_max=0.5, n_paths=1000, seed=9, batch_size=256, threads=1)
        many = single.model_copy(update={"threads": 4})
        runs = []
        for config in (single, many):
            engine = PathEngine(heston_b, heston_box, config, 0.0, 0.5, until="tau")
            runs.append(run_paths(engine, [0.0, 0.2], config))
        np.testing.assert_array_equal(runs[0].tau.discount, runs[1].tau.discount)
        np.testing.assert_array_equal(runs[0].tau.face, runs[1].tau.face)

    def test_exit_faces(self, heston_b, heston_box):
        """Test that every path ends on a face or the horizon."""
        config = SimConfig(dt=0.01, t_max=0.5, n_paths=500, seed=1)
        engine = PathEngine(heston_b, heston_box, config, 0.0, 0.5, until="tau")
        sample = run_paths(engine, [0.0, 0.2], config)
        assert set(np.unique(sample.tau.face)) <= {FACE_GAMMA1, FACE_GAMMA0, FACE_HORIZON}
        assert np.all(sample.tau.time <= 0.5 + 1e-12)

    def test_trace_paths(self, gbm, half_line):
        """Test recorded trajectories."""
        config = SimConfig(dt=0.1, t_max=1.0, n_paths=50)
        engine = PathEngine(gbm, half_line, config, 0.0, 1.0)
        sample = trace_paths(engine, [1.0], config, 3)
        assert sample.trajectory.shape == (3, 11, 1)
        np.testing.assert_allclose(sample.trajectory_discount[:, -1], 0.05)


class TestSupermartingaleProfile:
    """Tests for the supermartingale diagnostic."""

    @pytest.mark.parametrize("model", [
        gbm1d(mu=0.05, sigma=0.2, killing=0.2),
        cir1d(kappa=1.0, theta=0.2, sigma=0.5, killing=3.0),
    ])
    def test_non_increasing(self, model):
        """Test that the profile does not increase beyond noise."""
        M = compute_M(model).M
        config = SimConfig(dt=0.01, t_max=1.0, n_paths=4000, seed=3)
        profile = supermartingale_profile(model, [0.5], [0.0, 0.25, 0.5, 1.0], config, M)
        assert profile[0].mean == pytest.approx(0.25 + M / model.c0)
        for prev, cur in zip(profile[:-1], profile[1:]):
            assert cur.mean <= prev.mean + 3.0 * math.hypot(prev.stderr, cur.stderr)
