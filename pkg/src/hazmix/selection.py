"""Cluster-count grid search and three-rule interpretable model selection.

A candidate C passes when its WAIC is within tolerance of the grid best,
every cluster holds at least the minimum share of pumps (hard assignments),
and adjacent posterior-mean cluster centers are separated by the minimum
gap. The chosen model is the smallest passing C.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .advi import AdviConfig, VariationalPosterior, draw_posterior, fit_advi
from .analysis import assign_clusters
from .diagnostics import WaicReport, waic
from .ingest import IntervalData
from .model import MIXTURE, ModelSpec, pointwise_log_likelihood, to_constrained

log = logging.getLogger(__name__)


@dataclass
class SelectionConfig:
    candidate_cs: tuple[int, ...] = (2, 3, 4, 5)
    waic_tolerance: float = 50.0
    min_share: float = 0.05
    min_gap: float = 0.15

    def __post_init__(self):
        if self.waic_tolerance < 0 or self.min_gap < 0:
            raise ValueError("tolerances must be non-negative")
        if not 0.0 < self.min_share < 1.0:
            raise ValueError("min_share must be in (0, 1)")


@dataclass
class CandidateRow:
    n_clusters: int
    waic: float
    min_share: float
    min_gap: float
    failed: bool = False


@dataclass
class SelectionReport:
    rows: list[dict]
    chosen: int | None

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "chosen": self.chosen}, indent=2)

    def table(self) -> str:
        lines = [f"{'C':>3} {'WAIC':>12} {'MinShare':>9} {'MinGap':>7} {'Rules':>6} Status"]
        for r in self.rows:
            flags = "".join("Y" if r[k] else "n" for k in ("waic_ok", "share_ok", "gap_ok"))
            status = "failed-fit" if r["failed"] else ("valid" if r["valid"] else "fail")
            lines.append(
                f"{r['n_clusters']:>3} {r['waic']:>12.1f} {r['min_share']:>8.1%} "
                f"{r['min_gap']:>7.2f} {flags:>6} {status}"
            )
        lines.append(f"chosen C* = {self.chosen if self.chosen is not None else 'none'}")
        return "\n".join(lines)


@dataclass
class GridEntry:
    n_clusters: int
    posterior: VariationalPosterior | None
    waic_report: WaicReport | None
    min_share: float
    min_gap: float
    error: str | None = None


def evaluate_candidate(
    intervals, spec: ModelSpec, advi_config: AdviConfig, waic_draws: int = 1000
) -> GridEntry:
    """Fit one mixture candidate and derive its selection statistics."""
    data = IntervalData.from_intervals(intervals)
    q = fit_advi(data, spec, advi_config)
    rng = np.random.default_rng(advi_config.seed + 1)
    trace = draw_posterior(q, advi_config.draws, spec, rng)
    assignment = assign_clusters(trace, spec.n_pumps, spec.n_clusters)

    thin = min(waic_draws, advi_config.draws)
    idx = np.linspace(0, advi_config.draws - 1, thin).astype(int)
    ll = np.array(
        [
            pointwise_log_likelihood(data, to_constrained(trace.chains[0][d], spec)[0])
            for d in idx
        ]
    )
    report = waic(ll)
    mu_mean = trace.stacked_block("mu").mean(axis=0)
    min_gap = float(np.min(np.diff(mu_mean))) if spec.n_clusters > 1 else float("inf")
    return GridEntry(
        n_clusters=spec.n_clusters,
        posterior=q,
        waic_report=report,
        min_share=assignment.min_share(),
        min_gap=min_gap,
    )


def grid_search(
    intervals,
    spec_template: ModelSpec,
    candidate_cs,
    advi_config: AdviConfig | None = None,
    jobs: int = 1,
) -> dict[int, GridEntry]:
    """Fit each candidate cluster count independently (parallelizable).

    A failed fit marks that candidate and the rest proceed.
    """
    candidate_cs = list(candidate_cs)
    if not candidate_cs:
        raise ValueError("need at least one candidate")
    advi_config = advi_config or AdviConfig.from_env()
    data = IntervalData.from_intervals(intervals)

    def run(c: int) -> GridEntry:
        spec = replace(spec_template, kind=MIXTURE, n_clusters=c)
        try:
            return evaluate_candidate(data, spec, advi_config)
        except Exception as exc:  # candidate-level isolation
            log.warning("candidate C=%d failed: %s", c, exc)
            return GridEntry(c, None, None, float("nan"), float("nan"), error=str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(run, candidate_cs))
    else:
        entries = [run(c) for c in candidate_cs]
    return {e.n_clusters: e for e in entries}


def select_model(rows: list[CandidateRow], config: SelectionConfig | None = None) -> SelectionReport:
    """Apply the three rules and pick the smallest passing candidate."""
    config = config or SelectionConfig()
    usable = [r for r in rows if not r.failed and np.isfinite(r.waic)]
    if not usable:
        raise ValueError("no candidate has a finite WAIC")
    best = min(r.waic for r in usable)
    out = []
    valid = []
    for r in sorted(rows, key=lambda r: r.n_clusters):
        if r.failed or not np.isfinite(r.waic):
            out.append(
                {
                    "n_clusters": r.n_clusters, "waic": r.waic,
                    "min_share": r.min_share, "min_gap": r.min_gap,
                    "waic_ok": False, "share_ok": False, "gap_ok": False,
                    "valid": False, "failed": True,
                }
            )
            continue
        waic_ok = abs(r.waic - best) <= config.waic_tolerance
        share_ok = r.min_share >= config.min_share
        gap_ok = r.min_gap >= config.min_gap
        ok = waic_ok and share_ok and gap_ok
        if ok:
            valid.append(r.n_clusters)
        out.append(
            {
                "n_clusters": r.n_clusters, "waic": r.waic,
                "min_share": r.min_share, "min_gap": r.min_gap,
                "waic_ok": waic_ok, "share_ok": share_ok, "gap_ok": gap_ok,
                "valid": ok, "failed": False,
            }
        )
    return SelectionReport(rows=out, chosen=min(valid) if valid else None)


def rows_from_grid(grid: dict[int, GridEntry]) -> list[CandidateRow]:
    return [
        CandidateRow(
            n_clusters=c,
            waic=e.waic_report.waic if e.waic_report else float("nan"),
            min_share=e.min_share,
            min_gap=e.min_gap,
            failed=e.error is not None,
        )
        for c, e in sorted(grid.items())
    ]
