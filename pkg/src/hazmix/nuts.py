"""No-U-Turn sampler with dual-averaging step size and diagonal mass matrix.

Multinomial state selection inside the doubling tree (rather than slice
sampling), divergences flagged when the energy error exceeds a threshold,
and a three-window warmup: step-size adaptation under unit mass, mass
estimation from the second half of warmup, then a short re-adaptation under
the final metric. Chains own independent RNG substreams and a run is
deterministic given the seed.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .advi import VariationalPosterior
from .model import ModelSpec, make_target
from .trace import SampleTrace, constrain_draws


@dataclass
class NutsConfig:
    draws: int = 2_000
    tune: int = 1_000
    chains: int = 4
    target_accept: float = 0.95
    max_tree_depth: int = 10
    divergence_energy_threshold: float = 1_000.0
    init: str = "prior"  # or "advi"
    seed: int = 42

    def __post_init__(self):
        if min(self.draws, self.tune, self.chains) < 1:
            raise ValueError("draws, tune, chains must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.init not in ("prior", "advi"):
            raise ValueError("init must be 'prior' or 'advi'")

    @classmethod
    def from_env(cls, **overrides) -> "NutsConfig":
        kw = {}
        env = {
            "draws": ("HAZMIX_NUTS_DRAWS", int),
            "tune": ("HAZMIX_NUTS_TUNE", int),
            "chains": ("HAZMIX_NUTS_CHAINS", int),
            "target_accept": ("HAZMIX_TARGET_ACCEPT", float),
            "seed": ("HAZMIX_SEED", int),
        }
        for name, (var, cast) in env.items():
            if var in os.environ:
                kw[name] = cast(os.environ[var])
        kw.update(overrides)
        return cls(**kw)


class AllDivergentError(RuntimeError):
    """Every warmup iteration diverged; carries per-chain diagnostics."""


def leapfrog(theta, momentum, step_size, grad_fn, inv_mass=None):
    """One symplectic leapfrog step; returns (theta', momentum').

    `grad_fn` returns the gradient of the log density. A non-finite
    gradient propagates as non-finite state, which the caller treats as a
    divergence.
    """
    inv_mass = 1.0 if inv_mass is None else inv_mass
    r = momentum + 0.5 * step_size * grad_fn(theta)
    theta_new = theta + step_size * inv_mass * r
    r = r + 0.5 * step_size * grad_fn(theta_new)
    return theta_new, r


class _Tree:
    """Recursive multinomial NUTS tree for one target."""

    def __init__(self, logp_and_grad, inv_mass, step_size, max_depth, energy_threshold, rng):
        self.f = logp_and_grad
        self.inv_mass = inv_mass
        self.eps = step_size
        self.max_depth = max_depth
        self.threshold = energy_threshold
        self.rng = rng
        self.n_div = 0

    def _hamiltonian(self, logp: float, r: np.ndarray) -> float:
        with np.errstate(over="ignore"):
            return -logp + 0.5 * float(np.sum(self.inv_mass * r * r))

    def _single_step(self, theta, r, grad, direction):
        eps = direction * self.eps
        with np.errstate(over="ignore", invalid="ignore"):
            r1 = r + 0.5 * eps * grad
            theta1 = theta + eps * self.inv_mass * r1
            logp1, grad1 = self.f(theta1)
            r1 = r1 + 0.5 * eps * grad1
        return theta1, r1, logp1, grad1

    def build(self, theta, r, grad, logp, direction, depth, h0):
        """Returns (minus_state, plus_state, proposal, log_weight, keep_going, alpha, n_alpha).

        States are (theta, r, grad, logp) tuples; proposal is a (theta, grad,
        logp) tuple sampled multinomially by exp(-H).
        """
        if depth == 0:
            theta1, r1, logp1, grad1 = self._single_step(theta, r, grad, direction)
            if np.all(np.isfinite(r1)) and np.isfinite(logp1):
                h1 = self._hamiltonian(logp1, r1)
            else:
                h1 = np.inf
            diverged = (h1 - h0) > self.threshold or not np.isfinite(h1)
            if diverged:
                self.n_div += 1
                state = (theta1, r1, grad1, logp1)
                return state, state, None, -np.inf, False, 0.0, 1
            state = (theta1, r1, grad1, logp1)
            log_w = h0 - h1
            alpha = min(1.0, float(np.exp(h0 - h1)))
            return state, state, (theta1, grad1, logp1), log_w, True, alpha, 1

        minus, plus, prop, log_w, ok, alpha, n_alpha = self.build(
            theta, r, grad, logp, direction, depth - 1, h0)
        if not ok:
            return minus, plus, prop, log_w, False, alpha, n_alpha
        if direction == -1:
            minus, _, prop2, log_w2, ok2, a2, n2 = self.build(
                *minus, direction, depth - 1, h0)
        else:
            _, plus, prop2, log_w2, ok2, a2, n2 = self.build(
                *plus, direction, depth - 1, h0)
        alpha += a2
        n_alpha += n2
        if not ok2:
            return minus, plus, prop, log_w, False, alpha, n_alpha
        total = np.logaddexp(log_w, log_w2)
        if prop2 is not None and np.log(self.rng.uniform()) < log_w2 - total:
            prop = prop2
        ok = ok2 and not self._u_turn(minus, plus)
        return minus, plus, prop, total, ok, alpha, n_alpha

    def _u_turn(self, minus, plus) -> bool:
        dtheta = plus[0] - minus[0]
        return (
            float(np.dot(dtheta, self.inv_mass * minus[1])) < 0
            or float(np.dot(dtheta, self.inv_mass * plus[1])) < 0
        )


def _nuts_step(tree: _Tree, theta, logp, grad, rng, max_depth):
    """One NUTS transition; returns (theta', logp', grad', depth, diverged, accept_stat)."""
    d = theta.size
    std = np.sqrt(1.0 / tree.inv_mass) if np.ndim(tree.inv_mass) else np.full(d, 1.0)
    r0 = rng.standard_normal(d) * std
    h0 = tree._hamiltonian(logp, r0)
    minus = (theta, r0, grad, logp)
    plus = (theta, r0, grad, logp)
    prop = (theta, grad, logp)
    log_w = 0.0
    depth = 0
    div_before = tree.n_div
    alpha_sum, n_alpha = 0.0, 0
    while depth < max_depth:
        direction = 1 if rng.uniform() < 0.5 else -1
        if direction == -1:
            minus, _, prop2, log_w2, ok, a, na = tree.build(*minus, direction, depth, h0)
        else:
            _, plus, prop2, log_w2, ok, a, na = tree.build(*plus, direction, depth, h0)
        alpha_sum += a
        n_alpha += na
        if not ok:
            break
        # biased progressive sampling favors the new subtree
        if prop2 is not None and np.log(rng.uniform()) < log_w2 - log_w:
            prop = prop2
        log_w = np.logaddexp(log_w, log_w2)
        depth += 1
        if tree._u_turn(minus, plus):
            break
    diverged = tree.n_div > div_before
    accept = alpha_sum / max(n_alpha, 1)
    return prop[0], prop[2], prop[1], depth, diverged, accept


def find_reasonable_epsilon(logp_and_grad, theta, inv_mass, rng) -> float:
    """Step-size heuristic: double/halve until acceptance crosses 0.5."""
    d = theta.size
    eps = 1.0
    std = np.sqrt(1.0 / inv_mass)
    r = rng.standard_normal(d) * std
    logp, grad = logp_and_grad(theta)
    h0 = -logp + 0.5 * float(np.sum(inv_mass * r * r))

    def joint(eps):
        r1 = r + 0.5 * eps * grad
        theta1 = theta + eps * inv_mass * r1
        logp1, grad1 = logp_and_grad(theta1)
        r1 = r1 + 0.5 * eps * grad1
        if not (np.isfinite(logp1) and np.all(np.isfinite(r1))):
            return -np.inf
        with np.errstate(over="ignore"):
            return -(-logp1 + 0.5 * float(np.sum(inv_mass * r1 * r1)))

    log_ratio = joint(eps) + h0
    direction = 1.0 if log_ratio > np.log(0.5) else -1.0
    for _ in range(50):
        eps *= 2.0**direction
        log_ratio = joint(eps) + h0
        if direction * log_ratio <= direction * np.log(0.5):
            break
    return eps


@dataclass
class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    eps0: float
    target: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    def __post_init__(self):
        self.mu = np.log(10.0 * self.eps0)
        self.log_eps = np.log(self.eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept_stat: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        w = m**-self.kappa
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    @property
    def adapted(self) -> float:
        return float(np.exp(self.log_eps_bar))


def sample_chain(
    logp_and_grad,
    theta0: np.ndarray,
    config: NutsConfig,
    rng: np.random.Generator,
):
    """Run warmup + sampling for one chain on a generic target.

    Returns (draws, divergences, tree_depths, info).
    """
    d = theta0.size
    theta = np.asarray(theta0, dtype=float).copy()
    logp, grad = logp_and_grad(theta)
    if not np.isfinite(logp):
        raise ValueError("initial point has non-finite log density")
    inv_mass = np.ones(d)

    tune = config.tune
    mass_window_start = tune // 2
    final_window_start = max(mass_window_start + 1, (9 * tune) // 10)

    eps = find_reasonable_epsilon(logp_and_grad, theta, inv_mass, rng)
    da = _DualAveraging(eps, config.target_accept)
    warm_draws = np.empty((tune, d))
    n_div_warm = 0

    for m in range(tune):
        tree = _Tree(logp_and_grad, inv_mass, eps, config.max_tree_depth,
                     config.divergence_energy_threshold, rng)
        theta, logp, grad, _, diverged, accept = _nuts_step(
            tree, theta, logp, grad, rng, config.max_tree_depth)
        n_div_warm += diverged
        warm_draws[m] = theta
        eps = da.update(accept)
        if m + 1 == final_window_start and m + 1 - mass_window_start >= 10:
            # estimate the metric from the second half of warmup so far,
            # then re-adapt the step size under it
            window = warm_draws[mass_window_start:m + 1]
            var = np.var(window, axis=0, ddof=1)
            n = window.shape[0]
            var = (n / (n + 5.0)) * var + (5.0 / (n + 5.0)) * 1e-3
            inv_mass = 1.0 / np.maximum(var, 1e-10)
            eps = find_reasonable_epsilon(logp_and_grad, theta, inv_mass, rng)
            da = _DualAveraging(eps, config.target_accept)

    if n_div_warm == tune:
        raise AllDivergentError(
            f"all {tune} warmup iterations diverged (step size {eps:.3e})")

    eps = da.adapted
    draws = np.empty((config.draws, d))
    divergences = np.zeros(config.draws, dtype=bool)
    depths = np.zeros(config.draws, dtype=int)
    for m in range(config.draws):
        tree = _Tree(logp_and_grad, inv_mass, eps, config.max_tree_depth,
                     config.divergence_energy_threshold, rng)
        theta, logp, grad, depth, diverged, _ = _nuts_step(
            tree, theta, logp, grad, rng, config.max_tree_depth)
        draws[m] = theta
        divergences[m] = diverged
        depths[m] = depth
    info = {"step_size": eps, "inv_mass": inv_mass.tolist(), "warmup_divergences": int(n_div_warm)}
    return draws, divergences, depths, info


def sample_target(
    logp_and_grad,
    dim: int,
    config: NutsConfig,
    init_points: list[np.ndarray] | None = None,
) -> SampleTrace:
    """Multi-chain NUTS on a generic (log density, gradient) target."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    chains, divs, depths, infos = [], [], [], []
    t_start = time.perf_counter()
    for c in range(config.chains):
        rng = np.random.default_rng(seeds[c])
        if init_points is not None:
            theta0 = init_points[c]
        else:
            theta0 = rng.uniform(-1.0, 1.0, size=dim)
        ch, dv, dp, info = sample_chain(logp_and_grad, theta0, config, rng)
        chains.append(ch)
        divs.append(dv)
        depths.append(dp)
        infos.append(info)
    meta = {
        "engine": "nuts",
        "seed": config.seed,
        "adaptation": infos,
        "wall_clock_s": time.perf_counter() - t_start,
    }
    return SampleTrace(
        chains=chains,
        constrained=[{} for _ in chains],
        divergences=divs,
        tree_depths=depths,
        meta=meta,
    )


def sample_nuts(
    intervals,
    spec: ModelSpec,
    config: NutsConfig | None = None,
    warmstart: VariationalPosterior | None = None,
) -> SampleTrace:
    """NUTS over a hazard model; optional warmstart from a fitted ADVI posterior.

    With init='advi', chain 0 starts exactly at the variational mean and the
    remaining chains at independent draws from the variational posterior.
    """
    config = config or NutsConfig.from_env()
    target = make_target(intervals, spec)
    init_points = None
    if config.init == "advi" or warmstart is not None:
        if warmstart is None:
            raise ValueError("init='advi' requires a warmstart posterior")
        if warmstart.dim != spec.dim:
            raise ValueError("warmstart dimension does not match model")
        rng = np.random.default_rng(config.seed)
        init_points = [warmstart.mean.copy()] + [
            warmstart.sample(1, rng)[0] for _ in range(config.chains - 1)
        ]
    else:
        base = np.zeros(spec.dim)
        base[spec.blocks()["log_lambda0"]] = spec.lambda0_mean
        rng = np.random.default_rng(config.seed)
        init_points = [base + 0.5 * rng.standard_normal(spec.dim) for _ in range(config.chains)]
        init_points[0] = base.copy()
    trace = sample_target(target, spec.dim, config, init_points=init_points)
    trace.constrained = [constrain_draws(ch, spec) for ch in trace.chains]
    trace.meta["model_kind"] = spec.kind
    return trace
