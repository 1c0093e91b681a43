"""Full-rank ADVI: Gaussian variational family optimized with Adam.

The variational state is (mean, L) with Sigma = L L^T; L carries a
log-diagonal parameterization so positivity stays unconstrained. ELBO
gradients use the reparameterization trick with S Monte Carlo samples per
step; non-finite log-joint values at a draw are clamped to a large negative
sentinel so transient overflow early in optimization does not abort the fit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelSpec, make_target
from .trace import SampleTrace, constrain_draws

_CLAMP = -1e12


class AdviDivergenceError(RuntimeError):
    """ELBO running mean decreased for several consecutive windows."""

    def __init__(self, message: str, trace: list[tuple[int, float]]):
        super().__init__(message)
        self.trace = trace


@dataclass
class AdviConfig:
    iterations: int = 20_000
    mc_samples: int = 8
    learning_rate: float = 0.001
    draws: int = 3_000
    seed: int = 42
    convergence_tol: float = 1e-4
    window: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("iterations", "mc_samples", "learning_rate", "draws",
                     "convergence_tol", "window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_env(cls, **overrides) -> "AdviConfig":
        """Defaults overridable by HAZMIX_ADVI_* / HAZMIX_SEED env vars."""
        kw = {}
        env = {
            "iterations": ("HAZMIX_ADVI_ITERS", int),
            "mc_samples": ("HAZMIX_ADVI_SAMPLES", int),
            "learning_rate": ("HAZMIX_ADVI_LR", float),
            "seed": ("HAZMIX_SEED", int),
        }
        for name, (var, cast) in env.items():
            if var in os.environ:
                kw[name] = cast(os.environ[var])
        kw.update(overrides)
        return cls(**kw)


@dataclass
class VariationalPosterior:
    mean: np.ndarray                  # (D,)
    scale_tril: np.ndarray            # (D, D) lower-triangular, positive diagonal
    elbo_trace: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        if np.any(np.diag(self.scale_tril) <= 0):
            raise ValueError("scale_tril diagonal must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.size

    def entropy(self) -> float:
        d = self.dim
        return float(np.sum(np.log(np.diag(self.scale_tril))) + 0.5 * d * (1.0 + np.log(2.0 * np.pi)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((n, self.dim))
        return self.mean + eps @ self.scale_tril.T

    def covariance(self) -> np.ndarray:
        return self.scale_tril @ self.scale_tril.T

    def to_json(self) -> str:
        idx = np.tril_indices(self.dim)
        return json.dumps(
            {
                "dim": self.dim,
                "mean": self.mean.tolist(),
                "scale_tril_packed": self.scale_tril[idx].tolist(),
                "elbo_trace": [[int(i), float(v)] for i, v in self.elbo_trace],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "VariationalPosterior":
        obj = json.loads(text)
        d = obj["dim"]
        tril = np.zeros((d, d))
        tril[np.tril_indices(d)] = obj["scale_tril_packed"]
        return cls(
            mean=np.array(obj["mean"]),
            scale_tril=tril,
            elbo_trace=[(i, v) for i, v in obj["elbo_trace"]],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "VariationalPosterior":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# ELBO
# ---------------------------------------------------------------------------

def elbo_for_target(
    q: VariationalPosterior,
    logp,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """MC estimate of E_q[log p] + entropy(q) for a scalar log-density."""
    draws = q.sample(n_samples, rng)
    values = np.array([logp(theta) for theta in draws], dtype=float)
    bad = ~np.isfinite(values)
    if bad.sum() > 0.5 * n_samples:
        raise RuntimeError(f"{bad.sum()}/{n_samples} ELBO draws non-finite")
    values[bad] = _CLAMP
    return float(np.mean(values) + q.entropy())


def elbo_estimate(
    q: VariationalPosterior,
    intervals,
    spec: ModelSpec,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    target = make_target(intervals, spec)
    return elbo_for_target(q, lambda th: target(th)[0], n_samples, rng)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def fit_advi_target(
    logp_and_grad,
    dim: int,
    config: AdviConfig,
    init_mean: np.ndarray | None = None,
    init_scale: float = 0.1,
) -> VariationalPosterior:
    """Adam ascent on the reparameterized ELBO for an arbitrary target.

    Deterministic given config.seed. Stops at max iterations or when the
    relative change of consecutive window-averaged ELBO values falls below
    the tolerance; raises AdviDivergenceError if the running mean decreases
    for 5 consecutive windows.
    """
    rng = np.random.default_rng(config.seed)
    d = dim
    rows, cols = np.tril_indices(d, k=-1)

    mean = np.zeros(d) if init_mean is None else np.asarray(init_mean, dtype=float).copy()
    log_diag = np.full(d, np.log(init_scale))
    off = np.zeros(rows.size)

    phi = np.concatenate([mean, log_diag, off])
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    b1, b2, eps_adam = config.adam_beta1, config.adam_beta2, config.adam_eps
    lr = config.learning_rate
    s = config.mc_samples
    ent_const = 0.5 * d * (1.0 + np.log(2.0 * np.pi))

    elbo_trace: list[tuple[int, float]] = []
    window_means: list[float] = []
    window_sum, window_n = 0.0, 0
    decreasing = 0

    for it in range(1, config.iterations + 1):
        mean = phi[:d]
        log_diag = phi[d:2 * d]
        diag = np.exp(log_diag)
        tril = np.zeros((d, d))
        tril[rows, cols] = phi[2 * d:]
        tril[np.arange(d), np.arange(d)] = diag

        eps = rng.standard_normal((s, d))
        thetas = mean + eps @ tril.T

        g_mean = np.zeros(d)
        g_tril = np.zeros((d, d))
        f_sum = 0.0
        n_ok = 0
        for j in range(s):
            f, g = logp_and_grad(thetas[j])
            if not (np.isfinite(f) and np.all(np.isfinite(g))):
                f_sum += _CLAMP
                continue
            f_sum += f
            g_mean += g
            g_tril += np.outer(g, eps[j])
            n_ok += 1
        scale = 1.0 / s
        g_mean *= scale
        g_tril *= scale

        # entropy gradient: +1 on each log-diagonal coordinate
        g_log_diag = g_tril[np.arange(d), np.arange(d)] * diag + 1.0
        g_off = g_tril[rows, cols]
        grad_phi = np.concatenate([g_mean, g_log_diag, g_off])

        m = b1 * m + (1 - b1) * grad_phi
        v = b2 * v + (1 - b2) * grad_phi**2
        m_hat = m / (1 - b1**it)
        v_hat = v / (1 - b2**it)
        phi = phi + lr * m_hat / (np.sqrt(v_hat) + eps_adam)

        elbo = f_sum * scale + np.sum(log_diag) + ent_const
        window_sum += elbo
        window_n += 1
        if it % 50 == 0:
            elbo_trace.append((it, float(elbo)))
        if window_n == config.window:
            wmean = window_sum / window_n
            if window_means:
                prev = window_means[-1]
                if wmean < prev:
                    decreasing += 1
                    if decreasing >= 5:
                        raise AdviDivergenceError(
                            f"ELBO running mean decreased for {decreasing} consecutive "
                            f"{config.window}-iteration windows", elbo_trace)
                else:
                    decreasing = 0
                denom = max(abs(prev), 1e-12)
                if abs(wmean - prev) / denom < config.convergence_tol:
                    window_means.append(wmean)
                    break
            window_means.append(wmean)
            window_sum, window_n = 0.0, 0

    mean = phi[:d]
    diag = np.exp(phi[d:2 * d])
    tril = np.zeros((d, d))
    tril[rows, cols] = phi[2 * d:]
    tril[np.arange(d), np.arange(d)] = diag
    return VariationalPosterior(mean=mean, scale_tril=tril, elbo_trace=elbo_trace)


def initial_mean(spec: ModelSpec) -> np.ndarray:
    """Prior-centered start: zeros except log-baseline entries at their prior mean."""
    mean = np.zeros(spec.dim)
    mean[spec.blocks()["log_lambda0"]] = spec.lambda0_mean
    return mean


def fit_advi(intervals, spec: ModelSpec, config: AdviConfig | None = None) -> VariationalPosterior:
    """Fit the full-rank variational posterior of a hazard model."""
    config = config or AdviConfig.from_env()
    target = make_target(intervals, spec)
    return fit_advi_target(target, spec.dim, config, init_mean=initial_mean(spec))


def draw_posterior(
    q: VariationalPosterior,
    n_draws: int,
    spec: ModelSpec,
    rng: np.random.Generator,
) -> SampleTrace:
    """Constrained draws from a fitted posterior, as one synthetic chain."""
    draws = q.sample(n_draws, rng)
    return SampleTrace(
        chains=[draws],
        constrained=[constrain_draws(draws, spec)],
        divergences=[np.zeros(n_draws, dtype=bool)],
        tree_depths=[np.zeros(n_draws, dtype=int)],
        meta={"synthetic": True, "engine": "advi"},
    )
