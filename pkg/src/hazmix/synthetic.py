"""Ground-truth data generators for inference testing.

Two levels: interval-level draws directly from the hazard model (prev_state
cycled over 1..K-1 to decouple inference checks from trajectory effects),
and record-level health series pushed through the full pipeline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .ingest import InspectionRecord, TransitionInterval


@dataclass
class GeneratorConfig:
    n_pumps: int = 50
    intervals_per_pump: int = 40
    n_states: int = 4
    n_covariates: int = 2
    log_lambda0: np.ndarray = field(default_factory=lambda: np.full(4, -5.0))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sigma_u: float | None = 1.0          # random-effect heterogeneity
    pi: np.ndarray | None = None         # or mixture heterogeneity
    mu: np.ndarray | None = None
    sigma: float | None = None
    dt_range: tuple[float, float] = (20.0, 120.0)
    seed: int = 42

    def __post_init__(self):
        self.log_lambda0 = np.asarray(self.log_lambda0, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.pi is not None:
            self.pi = np.asarray(self.pi, dtype=float)
            self.mu = np.asarray(self.mu, dtype=float)
            if abs(self.pi.sum() - 1.0) > 1e-9 or np.any(self.pi <= 0):
                raise ValueError("pi must lie on the simplex")
            if np.any(np.diff(self.mu) <= 0):
                raise ValueError("mu must be strictly increasing")
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("mixture config needs sigma > 0")
        elif self.sigma_u is None or self.sigma_u <= 0:
            raise ValueError("need sigma_u > 0 or a mixture (pi, mu, sigma)")

    @property
    def is_mixture(self) -> bool:
        return self.pi is not None


def _draw_effects(config: GeneratorConfig, rng) -> tuple[np.ndarray, np.ndarray | None]:
    if config.is_mixture:
        labels = rng.choice(config.pi.size, size=config.n_pumps, p=config.pi)
        u = config.mu[labels] + config.sigma * rng.standard_normal(config.n_pumps)
        return u, labels + 1
    return config.sigma_u * rng.standard_normal(config.n_pumps), None


def simulate_intervals(config: GeneratorConfig):
    """Draw intervals from the hazard model.

    Returns (intervals, u, cluster_labels); labels are None for the
    random-effect configuration and 1-based otherwise.
    """
    rng = np.random.default_rng(config.seed)
    u, labels = _draw_effects(config, rng)
    k, p = config.n_states, config.n_covariates
    intervals = []
    for i in range(config.n_pumps):
        for j in range(config.intervals_per_pump):
            prev = 1 + j % (k - 1)
            x = rng.standard_normal(p)
            dt = rng.uniform(*config.dt_range)
            lam = np.exp(config.log_lambda0[prev - 1] + float(x @ config.beta) + u[i])
            moved = rng.uniform() < -np.expm1(-lam * dt)
            intervals.append(
                TransitionInterval(
                    pump_index=i,
                    prev_state=prev,
                    next_state=prev + 1 if moved else prev,
                    moved=bool(moved),
                    dt_days=float(dt),
                    covariates=x,
                )
            )
    return intervals, u, labels


def simulate_records(config: GeneratorConfig, n_records: int = 60, drift_scale: float = 0.02,
                     noise_sd: float = 0.3, start: date = date(2000, 1, 1)):
    """Record-level generator: positive-drift random walks, monthly timestamps.

    Drift scales with exp(u_i), so high-u pumps climb toward degraded states
    faster. Returns (records, u, cluster_labels).
    """
    rng = np.random.default_rng(config.seed)
    u, labels = _draw_effects(config, rng)
    records = []
    for i in range(config.n_pumps):
        drift = drift_scale * np.exp(u[i])
        value = 1.0
        for j in range(n_records):
            ts = start + timedelta(days=30 * j)
            records.append(
                InspectionRecord(
                    equipment_id=f"P{i:04d}",
                    item_id="vib",
                    timestamp=ts,
                    value=float(value),
                    install_date=start,
                )
            )
            value += drift + noise_sd * drift * rng.standard_normal()
    return records, u, labels


def write_records_csv(records: list[InspectionRecord], path: str | Path) -> None:
    """Emit the CSV schema that parse_records consumes."""
    d = records[0].embedding.size if records and records[0].embedding is not None else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["equipment_id", "item_id", "date", "value", "install_date"]
            + [f"emb_{j}" for j in range(d)]
        )
        for r in records:
            row = [
                r.equipment_id, r.item_id, r.timestamp.isoformat(),
                repr(r.value), r.install_date.isoformat(),
            ]
            if d:
                row += [repr(float(v)) for v in r.embedding]
            writer.writerow(row)
