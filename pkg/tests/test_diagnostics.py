"""Unit tests for convergence diagnostics and WAIC."""

import numpy as np
import pytest
from scipy.special import logsumexp

from hazmix.diagnostics import (
    ESS_CAP_FACTOR,
    WaicReport,
    compare_estimates,
    convergence_report,
    ess_bulk,
    split_rhat,
    waic,
)
from hazmix.trace import SampleTrace


class TestSplitRhat:
    def test_constant_chains_exactly_one(self):
        assert split_rhat(np.full((4, 100), 2.5)) == 1.0

    def test_iid_chains_near_one(self):
        rng = np.random.default_rng(0)
        draws = rng.normal(size=(4, 2000))
        r = split_rhat(draws)
        assert 0.999 <= r < 1.01

    def test_shifted_chain_detected(self):
        rng = np.random.default_rng(1)
        draws = rng.normal(size=(4, 500))
        draws[0] += 5.0
        assert split_rhat(draws) > 1.5

    def test_within_chain_trend_detected(self):
        # split halves catch non-stationarity inside a single chain
        rng = np.random.default_rng(2)
        draws = rng.normal(size=(2, 1000)) + np.linspace(0, 4, 1000)
        assert split_rhat(draws) > 1.1

    def test_rank_normalization_defeats_heavy_tails(self):
        rng = np.random.default_rng(3)
        draws = rng.standard_cauchy(size=(4, 2000))
        assert split_rhat(draws) < 1.02

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            split_rhat(np.zeros((2, 3)))


class TestEssBulk:
    def test_iid_draws_near_total(self):
        rng = np.random.default_rng(4)
        draws = rng.normal(size=(4, 1000))
        ess = ess_bulk(draws)
        assert 2800 < ess <= ESS_CAP_FACTOR * 4000

    def test_ar1_reduces_ess(self):
        rng = np.random.default_rng(5)
        phi = 0.9
        n = 4000
        chains = []
        for _ in range(4):
            e = rng.normal(size=n)
            x = np.empty(n)
            x[0] = e[0]
            for t in range(1, n):
                x[t] = phi * x[t - 1] + e[t]
            chains.append(x)
        draws = np.array(chains)
        ess = ess_bulk(draws)
        # theoretical tau = (1+phi)/(1-phi) = 19
        assert draws.size / 40 < ess < draws.size / 8

    def test_constant_chain_is_error(self):
        with pytest.raises(ValueError):
            ess_bulk(np.ones((2, 100)))

    def test_capped_at_factor_times_total(self):
        # strongly antithetic draws would exceed the cap without clamping
        base = np.tile([1.0, -1.0], 500)
        rng = np.random.default_rng(6)
        draws = np.array([base + rng.normal(scale=0.01, size=1000) for _ in range(2)])
        assert ess_bulk(draws) <= ESS_CAP_FACTOR * draws.size + 1e-9

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            ess_bulk(np.zeros((2, 7)))


class TestWaic:
    def test_matches_direct_formula_oracle(self):
        ll = np.array(
            [
                [-1.2, -0.7],
                [-1.0, -0.9],
                [-1.5, -0.8],
            ]
        )
        report = waic(ll)
        s = ll.shape[0]
        lppd = float(np.sum(logsumexp(ll, axis=0) - np.log(s)))
        p = float(np.sum(np.var(ll, axis=0, ddof=1)))
        assert report.lppd == pytest.approx(lppd, abs=1e-10)
        assert report.p_waic == pytest.approx(p, abs=1e-10)
        assert report.waic == pytest.approx(-2.0 * (lppd - p), abs=1e-10)
        assert report.pointwise.shape == (2,)
        assert float(np.sum(report.pointwise)) == pytest.approx(report.waic, abs=1e-10)

    def test_draw_permutation_invariance(self):
        rng = np.random.default_rng(7)
        ll = rng.normal(loc=-1.0, size=(50, 10))
        a = waic(ll)
        b = waic(ll[rng.permutation(50)])
        assert a.waic == b.waic
        assert a.p_waic == b.p_waic

    def test_interval_permutation_permutes_pointwise(self):
        rng = np.random.default_rng(8)
        ll = rng.normal(loc=-1.0, size=(50, 10))
        perm = rng.permutation(10)
        a = waic(ll)
        b = waic(ll[:, perm])
        np.testing.assert_allclose(b.pointwise, a.pointwise[perm], rtol=1e-12)
        assert b.waic == pytest.approx(a.waic, rel=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            waic(np.zeros((1, 5)))
        with pytest.raises(ValueError):
            waic(np.array([[0.0, np.inf], [0.0, 0.0]]))

    def test_json_round_trip(self):
        report = waic(np.random.default_rng(9).normal(size=(10, 4)))
        assert isinstance(report, WaicReport)
        text = report.to_json()
        assert '"waic"' in text and '"p_waic"' in text


class TestCompareEstimates:
    def test_perfect_agreement(self):
        a = np.array([0.1, -0.5, 1.2, 0.0])
        r, rmse = compare_estimates(a, a)
        assert r == pytest.approx(1.0)
        assert rmse == 0.0

    def test_known_offset(self):
        a = np.array([0.0, 1.0, 2.0, 3.0])
        r, rmse = compare_estimates(a, a + 0.5)
        assert r == pytest.approx(1.0)
        assert rmse == pytest.approx(0.5)

    def test_guards(self):
        with pytest.raises(ValueError):
            compare_estimates(np.ones(3), np.ones(3))
        with pytest.raises(ValueError):
            compare_estimates(np.arange(2.0), np.arange(2.0))


class TestConvergenceReport:
    def _trace(self, rng):
        chains = [rng.normal(size=(200, 3)) for _ in range(4)]
        return SampleTrace(
            chains=chains,
            constrained=[{} for _ in range(4)],
            divergences=[np.zeros(200, dtype=bool) for _ in range(4)],
            tree_depths=[np.full(200, 3) for _ in range(4)],
            meta={},
        )

    def test_reports_every_coordinate(self):
        trace = self._trace(np.random.default_rng(10))
        report = convergence_report(trace)
        assert report.parameters == ["theta_0", "theta_1", "theta_2"]
        assert report.max_rhat < 1.05
        assert report.min_ess > 100
        assert report.divergence_count == 0

    def test_divergence_rate(self):
        trace = self._trace(np.random.default_rng(11))
        trace.divergences[0][:20] = True
        report = convergence_report(trace)
        assert report.divergence_count == 20
        assert report.divergence_rate == pytest.approx(20 / 800)

    def test_csv_output(self, tmp_path):
        trace = self._trace(np.random.default_rng(12))
        report = convergence_report(trace)
        path = tmp_path / "conv.csv"
        report.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 4  # header + 3 parameters
        assert lines[0].startswith("parameter")
