"""Unit tests for cluster assignment, effect ranking, and occupancy curves."""

import numpy as np
import pytest

from hazmix.analysis import (
    ClusterAssignment,
    assign_clusters,
    curve_band,
    occupancy_curve,
    rank_effects,
)
from hazmix.trace import SampleTrace


def _mixture_trace(u_centers, pi, mu, sigma, n_draws=200, jitter=0.05, seed=0):
    rng = np.random.default_rng(seed)
    n = len(u_centers)
    c = len(mu)
    constrained = {
        "pi": np.tile(pi, (n_draws, 1)),
        "mu": np.tile(mu, (n_draws, 1)) + rng.normal(scale=jitter, size=(n_draws, c)),
        "sigma": np.full(n_draws, sigma),
        "u": np.tile(u_centers, (n_draws, 1)) + rng.normal(scale=jitter, size=(n_draws, n)),
        "log_lambda0": np.tile(np.full(3, -3.0), (n_draws, 1)),
        "beta": np.zeros((n_draws, 0)),
    }
    return SampleTrace(
        chains=[np.zeros((n_draws, 1))],
        constrained=[constrained],
        divergences=[np.zeros(n_draws, dtype=bool)],
        tree_depths=[np.zeros(n_draws, dtype=int)],
    )


class TestAssignClusters:
    def test_well_separated_pumps(self):
        u = np.array([-2.0, -2.1, -1.9, 1.0, 1.1])
        trace = _mixture_trace(u, pi=np.array([0.6, 0.4]), mu=np.array([-2.0, 1.0]), sigma=0.3)
        assignment = assign_clusters(trace, n_pumps=5, n_clusters=2)
        np.testing.assert_array_equal(assignment.hard_cluster, [1, 1, 1, 2, 2])
        np.testing.assert_allclose(assignment.responsibilities.sum(axis=1), 1.0, atol=1e-12)
        assert assignment.min_share() == pytest.approx(2 / 5)

    def test_shares_sum_to_one(self):
        u = np.array([-1.0, 0.0, 1.0, 2.0])
        trace = _mixture_trace(u, pi=np.array([0.5, 0.5]), mu=np.array([-1.0, 1.5]), sigma=0.5)
        assignment = assign_clusters(trace, 4, 2)
        assert assignment.shares().sum() == pytest.approx(1.0)

    def test_dimension_mismatch_rejected(self):
        trace = _mixture_trace(np.zeros(3), np.array([0.5, 0.5]), np.array([-1.0, 1.0]), 0.5)
        with pytest.raises(ValueError):
            assign_clusters(trace, n_pumps=4, n_clusters=2)

    def test_cluster_numbering_one_based(self):
        a = ClusterAssignment(
            hard_cluster=np.array([1, 1, 2]),
            responsibilities=np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9]]),
        )
        np.testing.assert_allclose(a.shares(), [2 / 3, 1 / 3])


class TestRankEffects:
    def test_orders_by_posterior_mean(self):
        rng = np.random.default_rng(1)
        centers = np.array([0.5, -1.0, 2.0])
        draws = centers + rng.normal(scale=0.1, size=(500, 3))
        ranking = rank_effects(draws)
        assert [r["pump"] for r in ranking] == [2, 0, 1]
        assert ranking[0]["factor"] == pytest.approx(np.exp(ranking[0]["mean"]))

    def test_significance_flag(self):
        rng = np.random.default_rng(2)
        draws = np.column_stack(
            [rng.normal(3.0, 0.1, 1000), rng.normal(0.0, 1.0, 1000)]
        )
        ranking = rank_effects(draws)
        flags = {r["pump"]: r["significant"] for r in ranking}
        assert flags[0] is True
        assert flags[1] is False

    def test_interval_coverage_bounds(self):
        rng = np.random.default_rng(3)
        draws = rng.normal(size=(2000, 2))
        for r in rank_effects(draws, alpha=0.05):
            assert r["lower"] < r["mean"] < r["upper"]

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            rank_effects(np.zeros((99, 2)))


class TestOccupancyCurve:
    def test_two_state_closed_form(self):
        # K=2 pure birth: p1(t) = exp(-lambda t)
        lam = np.exp(-3.0)
        curve = occupancy_curve(np.array([-3.0, 0.0]), 0.0, horizon_days=200.0)
        expected = np.exp(-lam * curve.time_days)
        np.testing.assert_allclose(curve.occupancy[:, 0], expected, atol=1e-6)
        np.testing.assert_allclose(
            curve.expected_state, 1.0 + (1.0 - expected), atol=1e-6
        )

    def test_rows_on_simplex(self):
        curve = occupancy_curve(np.full(8, -3.0), 0.5, horizon_days=500.0)
        np.testing.assert_allclose(curve.occupancy.sum(axis=1), 1.0, atol=1e-8)
        assert np.all(curve.occupancy >= 0)

    def test_expected_state_monotone_and_bounded(self):
        curve = occupancy_curve(np.full(5, -2.5), 0.0, horizon_days=800.0)
        assert np.all(np.diff(curve.expected_state) >= -1e-10)
        assert np.all(curve.expected_state >= 1.0 - 1e-12)
        assert np.all(curve.expected_state <= 5.0 + 1e-12)

    def test_offset_speeds_degradation(self):
        slow = occupancy_curve(np.full(4, -3.0), 0.0, horizon_days=300.0)
        fast = occupancy_curve(np.full(4, -3.0), 1.0, horizon_days=300.0)
        assert np.all(fast.expected_state[1:] > slow.expected_state[1:])

    def test_step_refined_for_fast_rates(self):
        # lambda = 1/day forces an internal step of 0.1 days; accuracy holds
        curve = occupancy_curve(np.array([0.0, 0.0]), 0.0, horizon_days=5.0)
        np.testing.assert_allclose(
            curve.occupancy[:, 0], np.exp(-curve.time_days), atol=1e-6
        )

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            occupancy_curve(np.full(3, -3.0), 0.0, horizon_days=0.0)


class TestCurveBand:
    def test_quantiles_ordered(self):
        rng = np.random.default_rng(4)
        n_draws = 60
        constrained = {
            "log_lambda0": np.full((n_draws, 4), -3.0) + rng.normal(scale=0.1, size=(n_draws, 4)),
            "beta": np.zeros((n_draws, 0)),
            "u": rng.normal(scale=0.2, size=(n_draws, 2)),
            "sigma_u": np.ones(n_draws),
        }
        trace = SampleTrace(
            chains=[np.zeros((n_draws, 1))],
            constrained=[constrained],
            divergences=[np.zeros(n_draws, dtype=bool)],
            tree_depths=[np.zeros(n_draws, dtype=int)],
        )
        band = curve_band(trace, constrained["u"][:, 0], horizon_days=100.0, step_days=5.0)
        lo, med, hi = band[0.025], band[0.5], band[0.975]
        assert np.all(lo <= med + 1e-12) and np.all(med <= hi + 1e-12)

    def test_offset_length_checked(self):
        trace = _mixture_trace(np.zeros(2), np.array([0.5, 0.5]), np.array([-1.0, 1.0]), 0.5)
        with pytest.raises(ValueError):
            curve_band(trace, np.zeros(7), horizon_days=10.0)
