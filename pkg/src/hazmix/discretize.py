"""Global-percentile discretization of health values into K ordered states.

Cutoffs are the corpus-wide percentiles at 100*i/K (type-7 linear
interpolation); a value exactly at a cutoff goes to the lower state.
Cutoffs are computed once and serialized so new data reuses them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import IntervalData


@dataclass(frozen=True)
class DiscretizationSpec:
    n_states: int
    cutoffs: np.ndarray  # ascending, length n_states - 1

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError("n_states must be >= 2")
        cut = np.asarray(self.cutoffs, dtype=float)
        object.__setattr__(self, "cutoffs", cut)
        if cut.size != self.n_states - 1:
            raise ValueError("cutoffs must have length n_states - 1")
        if np.any(np.diff(cut) < 0):
            raise ValueError("cutoffs must be non-decreasing")

    def to_json(self) -> str:
        return json.dumps({"n_states": self.n_states, "cutoffs": self.cutoffs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DiscretizationSpec":
        obj = json.loads(text)
        return cls(n_states=obj["n_states"], cutoffs=np.array(obj["cutoffs"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "DiscretizationSpec":
        return cls.from_json(Path(path).read_text())


def compute_cutoffs(values, n_states: int) -> DiscretizationSpec:
    """Percentile cutoffs at 100*i/K over all values (linear interpolation)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("values must be non-empty")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    if n_states < 2:
        raise ValueError("n_states must be >= 2")
    qs = 100.0 * np.arange(1, n_states) / n_states
    cutoffs = np.percentile(values, qs, method="linear")
    return DiscretizationSpec(n_states=n_states, cutoffs=cutoffs)


def assign_states(values, spec: DiscretizationSpec) -> list[int]:
    """Map values to states 1..K; cutoff-boundary values go to the lower state."""
    values = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(f"non-finite value at index {bad[0]}")
    states = 1 + np.sum(values[:, None] > spec.cutoffs[None, :], axis=1)
    return states.astype(int).tolist()


def event_rate(intervals) -> float:
    """Fraction of intervals with an upward transition."""
    data = IntervalData.from_intervals(intervals)
    return float(np.mean(data.moved))
