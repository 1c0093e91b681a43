"""Posterior decisions: cluster assignment, hazard rankings, degradation curves.

Degradation curves solve the pure-birth forward equations for the state
occupancy distribution under a fixed log-hazard offset, with RK4 at a step
bounded by 0.1 / lambda_max. The reference covariate point is the zero
vector in standardized space (population-average pump) and the benchmark
random effect is u = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import SampleTrace


@dataclass
class ClusterAssignment:
    hard_cluster: np.ndarray      # (N,), clusters numbered 1..C
    responsibilities: np.ndarray  # (N, C), posterior-averaged memberships

    def shares(self) -> np.ndarray:
        c = self.responsibilities.shape[1]
        counts = np.bincount(self.hard_cluster - 1, minlength=c)
        return counts / self.hard_cluster.size

    def min_share(self) -> float:
        return float(np.min(self.shares()))


@dataclass
class OccupancyCurve:
    time_days: np.ndarray   # (T,)
    occupancy: np.ndarray   # (T, K), each row on the simplex
    expected_state: np.ndarray  # (T,)


def assign_clusters(trace: SampleTrace, n_pumps: int, n_clusters: int) -> ClusterAssignment:
    """Posterior-averaged responsibilities r_ic ~ pi_c N(u_i; mu_c, sigma).

    Hard assignment is the argmax with lowest-index tiebreak.
    """
    pi = trace.stacked_block("pi")        # (S, C)
    mu = trace.stacked_block("mu")        # (S, C)
    sigma = trace.stacked_block("sigma")  # (S,)
    u = trace.stacked_block("u")          # (S, N)
    s, c = pi.shape
    if u.shape[1] != n_pumps or c != n_clusters:
        raise ValueError("trace dimensions do not match n_pumps/n_clusters")
    resp = np.zeros((n_pumps, c))
    for d in range(s):
        logw = (
            np.log(pi[d])[None, :]
            - np.log(sigma[d])
            - 0.5 * ((u[d][:, None] - mu[d][None, :]) / sigma[d]) ** 2
        )
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        resp += w / w.sum(axis=1, keepdims=True)
    resp /= s
    return ClusterAssignment(hard_cluster=np.argmax(resp, axis=1) + 1, responsibilities=resp)


def rank_effects(u_draws: np.ndarray, alpha: float = 0.05) -> list[dict]:
    """Rank pumps by posterior-mean random effect, descending.

    `u_draws` is (draws, N). Each entry reports the central (1 - alpha)
    interval, a significance flag (interval excludes 0), and the
    multiplicative hazard factor exp(mean).
    """
    u_draws = np.asarray(u_draws, dtype=float)
    if u_draws.shape[0] < 100:
        raise ValueError("need at least 100 draws for interval estimates")
    means = u_draws.mean(axis=0)
    lo, hi = np.percentile(u_draws, [100 * alpha / 2, 100 * (1 - alpha / 2)], axis=0)
    order = np.argsort(-means)
    return [
        {
            "pump": int(i),
            "mean": float(means[i]),
            "lower": float(lo[i]),
            "upper": float(hi[i]),
            "significant": bool(lo[i] > 0 or hi[i] < 0),
            "factor": float(np.exp(means[i])),
        }
        for i in order
    ]


def occupancy_curve(
    log_lambda0: np.ndarray,
    eta_offset: float,
    horizon_days: float,
    step_days: float = 1.0,
) -> OccupancyCurve:
    """Forward occupancy of the pure-birth degradation chain.

    State k -> k+1 flows at rate exp(log_lambda0[k] + eta_offset); the top
    state is absorbing. Integrates dp/dt with fixed-step RK4 starting from
    p(0) = (1, 0, ..., 0); the step is refined to keep lambda_max * step
    below 0.1.
    """
    if horizon_days <= 0:
        raise ValueError("horizon must be positive")
    log_lambda0 = np.asarray(log_lambda0, dtype=float)
    k = log_lambda0.size
    rates = np.exp(log_lambda0[: k - 1] + eta_offset)  # k -> k+1 for k < K
    lam_max = float(np.max(rates)) if rates.size else 0.0
    step = step_days
    if lam_max > 0:
        step = min(step, 0.1 / lam_max)

    times = np.arange(0.0, horizon_days + step_days, step_days)
    times = times[times <= horizon_days + 1e-9]

    def deriv(p):
        dp = np.zeros(k)
        flow = rates * p[:-1]
        dp[:-1] -= flow
        dp[1:] += flow
        return dp

    out = np.empty((times.size, k))
    p = np.zeros(k)
    p[0] = 1.0
    out[0] = p
    t = 0.0
    for idx in range(1, times.size):
        target = times[idx]
        while t < target - 1e-12:
            h = min(step, target - t)
            k1 = deriv(p)
            k2 = deriv(p + 0.5 * h * k1)
            k3 = deriv(p + 0.5 * h * k2)
            k4 = deriv(p + h * k3)
            p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        p = np.maximum(p, 0.0)
        p /= p.sum()
        out[idx] = p
    states = np.arange(1, k + 1)
    return OccupancyCurve(
        time_days=times,
        occupancy=out,
        expected_state=out @ states,
    )


def curve_band(
    trace: SampleTrace,
    eta_offsets: np.ndarray,
    horizon_days: float,
    step_days: float = 1.0,
    quantiles=(0.025, 0.5, 0.975),
    max_draws: int = 500,
) -> dict[float, np.ndarray]:
    """Pointwise quantile curves of expected state over posterior draws.

    `eta_offsets` supplies beta.x_ref + u per pooled draw (x_ref defaults to
    zero upstream, so this is typically just the u draw of one pump). Draws
    are thinned to at most `max_draws`.
    """
    l0 = trace.stacked_block("log_lambda0")
    eta_offsets = np.asarray(eta_offsets, dtype=float)
    s = l0.shape[0]
    if eta_offsets.size != s:
        raise ValueError("one offset per pooled draw required")
    if s > max_draws:
        idx = np.linspace(0, s - 1, max_draws).astype(int)
    else:
        idx = np.arange(s)
    curves = np.array(
        [
            occupancy_curve(l0[d], eta_offsets[d], horizon_days, step_days).expected_state
            for d in idx
        ]
    )
    return {float(q): np.quantile(curves, q, axis=0) for q in quantiles}
