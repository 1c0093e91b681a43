"""Unit tests for the full-rank variational inference engine."""

import numpy as np
import pytest

from hazmix.advi import (
    AdviConfig,
    AdviDivergenceError,
    VariationalPosterior,
    draw_posterior,
    elbo_for_target,
    fit_advi,
    fit_advi_target,
    initial_mean,
)
from hazmix.model import RANDOM_EFFECT, ModelSpec
from hazmix.synthetic import GeneratorConfig, simulate_intervals


def _gaussian_target(mean, cov):
    prec = np.linalg.inv(cov)

    def logp_and_grad(theta):
        diff = theta - mean
        return float(-0.5 * diff @ prec @ diff), -prec @ diff

    return logp_and_grad


class TestConfig:
    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv("HAZMIX_ADVI_ITERS", "123")
        monkeypatch.setenv("HAZMIX_SEED", "7")
        cfg = AdviConfig.from_env()
        assert cfg.iterations == 123
        assert cfg.seed == 7

    def test_explicit_overrides_beat_env(self, monkeypatch):
        monkeypatch.setenv("HAZMIX_ADVI_ITERS", "123")
        assert AdviConfig.from_env(iterations=9).iterations == 9

    def test_validation(self):
        with pytest.raises(ValueError):
            AdviConfig(iterations=0)
        with pytest.raises(ValueError):
            AdviConfig(learning_rate=-1.0)


class TestVariationalPosterior:
    def test_entropy_matches_gaussian_formula(self):
        tril = np.array([[2.0, 0.0], [0.5, 1.5]])
        q = VariationalPosterior(mean=np.zeros(2), scale_tril=tril)
        cov = tril @ tril.T
        expected = 0.5 * np.log(np.linalg.det(2 * np.pi * np.e * cov))
        assert q.entropy() == pytest.approx(expected, rel=1e-12)

    def test_sample_moments(self):
        tril = np.array([[1.0, 0.0], [0.8, 0.6]])
        q = VariationalPosterior(mean=np.array([3.0, -2.0]), scale_tril=tril)
        draws = q.sample(200_000, np.random.default_rng(0))
        np.testing.assert_allclose(draws.mean(axis=0), q.mean, atol=0.01)
        np.testing.assert_allclose(np.cov(draws.T), q.covariance(), atol=0.02)

    def test_json_round_trip(self):
        tril = np.array([[1.0, 0.0], [0.3, 0.7]])
        q = VariationalPosterior(
            mean=np.array([0.1, 0.2]), scale_tril=tril, elbo_trace=[(50, -1.5)]
        )
        back = VariationalPosterior.from_json(q.to_json())
        np.testing.assert_allclose(back.scale_tril, tril)
        assert back.elbo_trace == [(50, -1.5)]

    def test_positive_diagonal_required(self):
        with pytest.raises(ValueError):
            VariationalPosterior(mean=np.zeros(1), scale_tril=np.array([[-1.0]]))


class TestFitAdviTarget:
    def test_recovers_1d_gaussian(self):
        target = _gaussian_target(np.array([2.0]), np.array([[0.25]]))
        q = fit_advi_target(target, 1, AdviConfig(seed=0))
        assert abs(q.mean[0] - 2.0) < 0.02 * 0.5
        assert q.covariance()[0, 0] == pytest.approx(0.25, rel=0.10)

    def test_recovers_correlated_2d_gaussian(self):
        cov = np.array([[1.0, 0.8], [0.8, 1.0]])
        target = _gaussian_target(np.array([-1.0, 1.0]), cov)
        q = fit_advi_target(target, 2, AdviConfig(seed=1))
        np.testing.assert_allclose(q.mean, [-1.0, 1.0], atol=0.02)
        np.testing.assert_allclose(q.covariance(), cov, rtol=0.15)

    def test_deterministic_given_seed(self):
        target = _gaussian_target(np.zeros(2), np.eye(2))
        cfg = AdviConfig(iterations=500, seed=3)
        q1 = fit_advi_target(target, 2, cfg)
        q2 = fit_advi_target(target, 2, cfg)
        np.testing.assert_array_equal(q1.mean, q2.mean)
        np.testing.assert_array_equal(q1.scale_tril, q2.scale_tril)
        assert q1.elbo_trace == q2.elbo_trace

    def test_elbo_trace_every_50(self):
        target = _gaussian_target(np.zeros(1), np.eye(1))
        q = fit_advi_target(target, 1, AdviConfig(iterations=200, seed=4))
        assert [i for i, _ in q.elbo_trace] == [50, 100, 150, 200]

    def test_divergence_error_on_decreasing_elbo(self):
        # Non-stationary target whose density shrinks with every call, so
        # every window mean is lower than the one before it.
        calls = {"n": 0}

        def sinking(theta):
            calls["n"] += 1
            return float(-calls["n"]), np.zeros(1)

        cfg = AdviConfig(iterations=20000, window=100, seed=5)
        with pytest.raises(AdviDivergenceError) as exc:
            fit_advi_target(sinking, 1, cfg)
        assert isinstance(exc.value.trace, list)

    def test_clamps_transient_nonfinite(self):
        calls = {"n": 0}

        def flaky(theta):
            calls["n"] += 1
            if calls["n"] % 17 == 0:
                return float("nan"), np.full(1, np.nan)
            return float(-0.5 * theta[0] ** 2), np.array([-theta[0]])

        q = fit_advi_target(flaky, 1, AdviConfig(iterations=1500, learning_rate=0.02, seed=6))
        assert abs(q.mean[0]) < 0.2


class TestElboEstimate:
    def test_exact_for_matched_gaussian(self):
        # q == p: ELBO is the log normalizer, -0.5*log|2*pi*Sigma| ... here
        # the target is unnormalized N(0,1) so E[log p] + H = -0.5*E[x^2] + H
        q = VariationalPosterior(mean=np.zeros(1), scale_tril=np.eye(1))
        target = _gaussian_target(np.zeros(1), np.eye(1))
        est = elbo_for_target(q, lambda th: target(th)[0], 50_000, np.random.default_rng(7))
        expected = -0.5 + q.entropy()
        assert est == pytest.approx(expected, abs=0.02)

    def test_raises_when_mostly_nonfinite(self):
        q = VariationalPosterior(mean=np.zeros(1), scale_tril=np.eye(1))
        with pytest.raises(RuntimeError):
            elbo_for_target(q, lambda th: float("inf"), 10, np.random.default_rng(8))


class TestModelIntegration:
    def test_fit_and_draw_random_effect(self):
        cfg = GeneratorConfig(
            n_pumps=5, intervals_per_pump=20, n_states=3, n_covariates=1,
            log_lambda0=np.full(3, -4.0), beta=np.array([0.2]), sigma_u=0.5, seed=10,
        )
        ivs, _, _ = simulate_intervals(cfg)
        spec = ModelSpec(kind=RANDOM_EFFECT, n_states=3, n_covariates=1, n_pumps=5)
        q = fit_advi(ivs, spec, AdviConfig(iterations=1500, seed=11))
        assert q.dim == spec.dim
        trace = draw_posterior(q, 100, spec, np.random.default_rng(12))
        assert trace.meta["synthetic"] is True
        assert trace.stacked_block("u").shape == (100, 5)
        assert np.all(trace.stacked_block("sigma_u") > 0)

    def test_initial_mean_centers_baselines(self):
        spec = ModelSpec(kind=RANDOM_EFFECT, n_states=4, n_covariates=2, n_pumps=3)
        mean = initial_mean(spec)
        np.testing.assert_allclose(mean[:4], -3.0)
        np.testing.assert_allclose(mean[4:], 0.0)
