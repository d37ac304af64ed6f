"""
Tests for the dual_engine module.
"""
import logging

import numpy as np
import pytest
from scipy.stats import linregress

from src.dual_engine import (MAX_DIAGNOSTICS, AnticipatedFlows, DemandMatrix, DualEngine, DualHistory, DualState,
                             InitMode, dual_step, init, network_constants, primal_step, residual_trace)
from src.errors import InitializationError, ParameterError, StepSizeError
from src.models import NetworkConfig
from src.penalty import PenaltySpec


@pytest.fixture
def two_cache_network():
    """Two caches with C^c = C^r = 10 and quadratic penalties a_x = 1, a_y = 10."""
    return NetworkConfig.uniform(2, 5.0, 10.0, 10.0, PenaltySpec.quadratic(1.0), PenaltySpec.quadratic(10.0))


def _feasible_demand(rng, network, files):
    """Random demand whose per-cache total stays within C^c + C^r."""
    caps = network.cache_capacity + network.root_capacity
    totals = rng.uniform(0, 1, size=network.caches) * caps
    return totals[:, None] * rng.dirichlet(np.ones(files), size=network.caches)


class TestInit:
    """Tests for init() and the network constants."""

    def test_network_constants(self, two_cache_network):
        """Test m, L, Delta and the price floor."""
        consts = network_constants(two_cache_network, 50)
        assert consts.m == pytest.approx(1.0)
        np.testing.assert_allclose(consts.L, [10.0, 10.0])
        np.testing.assert_allclose(consts.delta_cap, [200.0, 200.0])
        np.testing.assert_allclose(consts.phi_floor, [0.0, 0.0])

    def test_floor_init(self, two_cache_network):
        """Test that floor initialization sits on the lower bound with mu = m/2."""
        state = init(two_cache_network, 50)
        assert state.shape == (2, 50)
        assert np.all(state.lam == 0.0)
        assert state.mu == pytest.approx(0.5)
        assert state.bound_violations() == []

    def test_uniform_cap_init(self, two_cache_network):
        """Test that uniform_cap spreads Delta evenly."""
        state = init(two_cache_network, 50, mode=InitMode.UNIFORM_CAP)
        np.testing.assert_allclose(state.lam.sum(axis=1), [200.0, 200.0])

    def test_step_size_guard(self, two_cache_network):
        """Test that mu outside (0, m) raises StepSizeError with m in the message."""
        with pytest.raises(StepSizeError, match="m=1"):
            init(two_cache_network, 10, mu=1.0)
        with pytest.raises(StepSizeError):
            init(two_cache_network, 10, mu=0.0)

    def test_custom_init(self, two_cache_network):
        """Test custom prices, their shape and their bounds."""
        lam = np.full((2, 10), 1.0)
        assert np.all(init(two_cache_network, 10, mode="custom", custom=lam).lam == 1.0)
        with pytest.raises(InitializationError):
            init(two_cache_network, 10, mode="custom", custom=np.ones((1, 10)))
        with pytest.raises(InitializationError):
            init(two_cache_network, 10, mode="custom", custom=np.full((2, 10), -1.0))
        with pytest.raises(InitializationError):
            init(two_cache_network, 10, mode="custom", custom=np.full((2, 10), 50.0))
        with pytest.raises(InitializationError):
            init(two_cache_network, 10, mode="custom")

    def test_state_is_immutable(self, two_cache_network):
        """Test that the price matrix cannot be written in place."""
        state = init(two_cache_network, 5)
        with pytest.raises(ValueError):
            state.lam[0, 0] = 1.0


class TestSteps:
    """Tests for primal_step() and dual_step()."""

    def test_dual_update_arithmetic(self):
        """Test lambda - mu (x + y - d) on a hand example."""
        state = DualState(np.array([[1.0, 2.0]]), 0.1, np.array([100.0]), np.array([0.0]))
        flows = AnticipatedFlows(np.array([[0.5, 0.5]]), np.zeros((1, 2)))
        new = dual_step(state, flows, DemandMatrix(np.array([[1.0, 0.0]])))
        np.testing.assert_allclose(new.lam, [[1.05, 1.95]])
        assert new.t == 1
        assert state.t == 0

    def test_shape_mismatch(self):
        """Test that mismatched flows are rejected."""
        state = DualState(np.zeros((1, 2)), 0.1, np.array([1.0]), np.array([0.0]))
        flows = AnticipatedFlows(np.zeros((1, 3)), np.zeros((1, 3)))
        with pytest.raises(ParameterError):
            dual_step(state, flows, DemandMatrix(np.zeros((1, 2))))

    def test_bound_breach_is_recorded(self, caplog):
        """Test that a breach is logged and kept as a diagnostic, not projected away."""
        state = DualState(np.array([[0.0]]), 0.5, np.array([100.0]), np.array([0.0]))
        flows = AnticipatedFlows(np.array([[4.0]]), np.zeros((1, 1)))
        with caplog.at_level(logging.WARNING):
            new = dual_step(state, flows, DemandMatrix(np.zeros((1, 1))))
        assert new.lam[0, 0] == pytest.approx(-2.0)
        assert len(new.diagnostics) == 1
        assert new.breaches == 1
        assert "below the floor" in caplog.text

    def test_primal_step_respects_capacities(self, two_cache_network):
        """Test that anticipated flows are non-negative and within C^c and C^r."""
        state = init(two_cache_network, 20, mode=InitMode.UNIFORM_CAP)
        flows = primal_step(state, two_cache_network, check_kkt=True)
        assert np.all(flows.x >= 0) and np.all(flows.y >= 0)
        assert np.all(flows.x.sum(axis=1) <= 10.0 + 1e-9)
        assert np.all(flows.y.sum(axis=1) <= 10.0 + 1e-9)
        assert flows.kkt_residual <= 1e-8

    def test_demand_validation(self):
        """Test that negative demand is rejected."""
        with pytest.raises(ParameterError):
            DemandMatrix(np.array([[1.0, -1.0]]))

    def test_infeasible_demand_warns(self, two_cache_network, caplog):
        """Test that demand above C^c + C^r is reported."""
        engine = DualEngine(two_cache_network, 4)
        demand = np.zeros((2, 4))
        demand[1, 0] = 25.0
        with caplog.at_level(logging.WARNING):
            engine.step(DemandMatrix(demand))
        assert "exceeds" in caplog.text
        assert not DemandMatrix(demand).feasible(two_cache_network)[1]

    def test_repeated_breaches_warn_once(self, caplog):
        """Test 400 over-provisioned steps: two warnings, bounded diagnostics, every breach counted."""
        network = NetworkConfig.uniform(1, 5.0, 1.0, 1.0, PenaltySpec.quadratic(1.0), PenaltySpec.quadratic(10.0))
        engine = DualEngine(network, 500)
        demand = DemandMatrix(np.full((1, 500), 5.0))
        with caplog.at_level(logging.WARNING, logger="src.dual_engine"):
            for _ in range(400):
                engine.step(demand)
        warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
        assert len(warnings) == 2
        assert len(engine.state.diagnostics) == MAX_DIAGNOSTICS
        assert engine.state.breaches == 400

    def test_price_tracks_raised_demand(self):
        """Test that extra demand on one (cache, file) raises only that price."""
        rng = np.random.default_rng(21)
        state = DualState(rng.uniform(1.0, 2.0, (2, 4)), 0.1, np.array([1e3, 1e3]), np.array([0.0, 0.0]))
        flows = AnticipatedFlows(rng.uniform(0, 1, (2, 4)), rng.uniform(0, 1, (2, 4)))
        base = rng.uniform(0, 2, (2, 4))
        reference = dual_step(state, flows, DemandMatrix(base)).lam
        for i in range(2):
            for f in range(4):
                raised = base.copy()
                raised[i, f] += rng.uniform(0.1, 1.0)
                lam = dual_step(state, flows, DemandMatrix(raised)).lam
                others = np.ones((2, 4), dtype=bool)
                others[i, f] = False
                assert lam[i, f] > reference[i, f]
                np.testing.assert_array_equal(lam[others], reference[others])


class TestResidualTrace:
    """Tests for the residual trace and long-run behavior."""

    def test_empty_history(self):
        """Test that a trace needs at least one step."""
        with pytest.raises(ParameterError):
            residual_trace(DualHistory(1, 2))

    def test_average_violation_telescopes(self, two_cache_network):
        """Test that the averaged residual equals (lambda(0) - lambda(T)) / (mu T)."""
        rng = np.random.default_rng(1)
        engine = DualEngine(two_cache_network, 8)
        start = engine.snapshot().lam.copy()
        for _ in range(30):
            engine.step(DemandMatrix(_feasible_demand(rng, two_cache_network, 8)))
        trace = engine.trace()
        expected = np.abs(start - engine.snapshot().lam) / (engine.state.mu * 30)
        np.testing.assert_allclose(trace.average_violation, expected, atol=1e-9)
        assert trace.steps == 30
        assert trace.gradient_proxy >= 0

    @pytest.mark.slow
    def test_price_bounds_hold(self, two_cache_network):
        """Test that both price bounds hold for 10^4 steps of feasible random demand."""
        rng = np.random.default_rng(7)
        files = 50
        engine = DualEngine(two_cache_network, files)
        for _ in range(10_000):
            engine.step(DemandMatrix(_feasible_demand(rng, two_cache_network, files)))
            assert engine.state.bound_violations() == []
        assert engine.state.diagnostics == ()

    @pytest.mark.slow
    def test_violation_decays_like_one_over_t(self, two_cache_network):
        """Test that the averaged violation falls as 1/T under stationary demand."""
        rng = np.random.default_rng(3)
        files = 50
        demand = DemandMatrix(_feasible_demand(rng, two_cache_network, files) * 0.5)
        engine = DualEngine(two_cache_network, files)
        checkpoints = {250, 500, 1000, 2000, 4000}
        means = {}
        for t in range(1, 4001):
            engine.step(demand)
            if t in checkpoints:
                means[t] = engine.trace().mean_violation
        assert means[2000] <= 0.6 * means[500]
        ts = sorted(means)
        fit = linregress(np.log(ts), np.log([means[t] for t in ts]))
        assert fit.slope == pytest.approx(-1.0, abs=0.3)
