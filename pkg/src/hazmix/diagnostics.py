"""Convergence and model-fit metrics: split R-hat, bulk ESS, WAIC.

R-hat and ESS follow modern practice: chains are split in half and
rank-normalized before the classic potential-scale-reduction and
autocorrelation formulas are applied (Geyer initial-monotone truncation for
ESS). WAIC is reported on the deviance scale with one transition interval
as the pointwise unit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps
from scipy.special import logsumexp

ESS_CAP_FACTOR = 1.5  # ESS never reported above this multiple of total draws


@dataclass
class WaicReport:
    waic: float
    lppd: float
    p_waic: float
    pointwise: np.ndarray  # per-interval -2*(lppd_i - p_waic_i)

    def to_json(self) -> str:
        return json.dumps(
            {
                "waic": self.waic,
                "lppd": self.lppd,
                "p_waic": self.p_waic,
                "pointwise": self.pointwise.tolist(),
            }
        )


@dataclass
class ConvergenceReport:
    parameters: list[str]
    rhat: np.ndarray
    ess_bulk: np.ndarray
    divergence_count: int
    divergence_rate: float
    metadata: dict

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.rhat))

    @property
    def min_ess(self) -> float:
        return float(np.min(self.ess_bulk))

    def to_json(self) -> str:
        return json.dumps(
            {
                "parameters": self.parameters,
                "rhat": self.rhat.tolist(),
                "ess_bulk": self.ess_bulk.tolist(),
                "max_rhat": self.max_rhat,
                "min_ess": self.min_ess,
                "divergence_count": self.divergence_count,
                "divergence_rate": self.divergence_rate,
                "metadata": self.metadata,
            },
            indent=2,
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parameter", "rhat", "ess"])
            for name, r, e in zip(self.parameters, self.rhat, self.ess_bulk):
                writer.writerow([name, repr(float(r)), repr(float(e))])


def _split_chains(draws: np.ndarray) -> np.ndarray:
    """(chains, n) -> (2*chains, n//2), dropping an odd trailing draw."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    n = draws.shape[1]
    half = n // 2
    return np.concatenate([draws[:, :half], draws[:, n - half:]], axis=0)


def _rank_normalize(draws: np.ndarray) -> np.ndarray:
    """Pooled fractional ranks mapped through the normal quantile function."""
    flat = draws.ravel()
    ranks = sps.rankdata(flat, method="average")
    z = sps.norm.ppf((ranks - 3.0 / 8.0) / (flat.size + 0.25))
    return z.reshape(draws.shape)


def split_rhat(draws: np.ndarray) -> float:
    """Split potential scale reduction on rank-normalized half-chains.

    `draws` is (chains, n) for one parameter. Constant input returns
    exactly 1.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[1] < 4:
        raise ValueError("split_rhat needs at least 4 draws per chain")
    if np.ptp(draws) == 0:
        return 1.0
    z = _rank_normalize(_split_chains(draws))
    m, n = z.shape
    chain_means = z.mean(axis=1)
    chain_vars = z.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    if w == 0:
        return 1.0
    return float(np.sqrt(var_plus / w))


def _chain_autocovariance(z: np.ndarray) -> np.ndarray:
    """Biased autocovariance per chain via FFT; z is (m, n)."""
    m, n = z.shape
    centered = z - z.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    fft = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(fft * np.conj(fft), n=size, axis=1)[:, :n].real
    return acov / n


def ess_bulk(draws: np.ndarray) -> float:
    """Bulk effective sample size on rank-normalized split half-chains.

    Uses the multi-chain autocorrelation estimator with Geyer's initial
    monotone positive sequence truncation; the result is capped at
    ESS_CAP_FACTOR x total draws. Constant chains are an error.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[1] < 8:
        raise ValueError("ess_bulk needs at least 8 draws per chain")
    if np.ptp(draws) == 0:
        raise ValueError("ess_bulk undefined for constant chains")
    z = _rank_normalize(_split_chains(draws))
    m, n = z.shape
    total = draws.size

    acov = _chain_autocovariance(z)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    mean_acov = acov.mean(axis=0)
    var_plus = mean_acov[0] * n / (n - 1.0)
    if m > 1:
        var_plus += z.mean(axis=1).var(ddof=1)

    rho = 1.0 - (w - mean_acov) / var_plus  # rho[0] == 1

    # Geyer: accumulate consecutive-pair sums P_t = rho_{2t-1} + rho_{2t}
    # while positive, forcing the sequence to be non-increasing; then
    # tau = -1 + 2 * sum of the kept pairs (the t=0 pair includes rho_0 = 1).
    max_t = n - 4
    running = 0.0
    prev = np.inf
    t = 0
    while t + 1 <= max_t:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        p = min(p, prev)
        prev = p
        running += p
        t += 2
    tau = max(-1.0 + 2.0 * running, 1.0 / ESS_CAP_FACTOR)
    ess = total / tau
    return float(min(ess, ESS_CAP_FACTOR * total))


def waic(pointwise_loglik: np.ndarray) -> WaicReport:
    """WAIC from a (draws, intervals) pointwise log-likelihood matrix."""
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise ValueError("need a (draws >= 2, intervals) matrix")
    if not np.all(np.isfinite(ll)):
        raise ValueError("pointwise log-likelihood contains non-finite entries")
    ll = np.sort(ll, axis=0)  # draw order is arbitrary; sorting makes the
    s = ll.shape[0]           # reductions bit-exact under permutation
    lppd_i = logsumexp(ll, axis=0) - np.log(s)
    p_i = np.var(ll, axis=0, ddof=1)
    lppd = float(np.sum(lppd_i))
    p_waic = float(np.sum(p_i))
    return WaicReport(
        waic=-2.0 * (lppd - p_waic),
        lppd=lppd,
        p_waic=p_waic,
        pointwise=-2.0 * (lppd_i - p_i),
    )


def compare_estimates(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Pearson correlation and RMS difference of two estimate vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size != b.size or a.size < 3:
        raise ValueError("need equal-length vectors of length >= 3")
    if np.std(a) == 0 or np.std(b) == 0:
        raise ValueError("zero variance input")
    r = float(np.corrcoef(a, b)[0, 1])
    rmse = float(np.sqrt(np.mean((a - b) ** 2)))
    return r, rmse


def convergence_report(trace, parameters: dict[str, np.ndarray] | None = None) -> ConvergenceReport:
    """Per-parameter R-hat/ESS over a SampleTrace's unconstrained coordinates.

    `parameters` optionally maps names to (chains, draws) matrices; by
    default every unconstrained coordinate is reported.
    """
    if parameters is None:
        stacked = np.stack(trace.chains, axis=0)  # (chains, draws, D)
        parameters = {f"theta_{j}": stacked[:, :, j] for j in range(stacked.shape[2])}
    names, rhats, esss = [], [], []
    for name, mat in parameters.items():
        names.append(name)
        rhats.append(split_rhat(mat))
        if np.ptp(mat) == 0:
            esss.append(float(mat.size))
        else:
            esss.append(ess_bulk(mat))
    n_total = sum(d.size for d in trace.divergences)
    n_div = trace.divergence_count()
    return ConvergenceReport(
        parameters=names,
        rhat=np.array(rhats),
        ess_bulk=np.array(esss),
        divergence_count=n_div,
        divergence_rate=n_div / n_total if n_total else 0.0,
        metadata={"rhat_method": "rank-normalized split", "ess_method": "bulk"},
    )
