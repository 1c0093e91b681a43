"""Inspection-record parsing and transition-interval construction.

Records are ordered per (equipment, check-item) series; consecutive pairs
become likelihood units carrying (prev_state, moved, dt_days, covariates).
Intervals that start in the top state are excluded (no k -> k+1 hazard is
defined there), state improvements are censored non-events, and duplicate
timestamps keep the last record.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SCHEMA = {
    "equipment_id": "equipment_id",
    "item_id": "item_id",
    "date": "date",
    "value": "value",
    "install_date": "install_date",
}
MANDATORY = ("equipment_id", "date", "value")


class SchemaError(ValueError):
    """A mandatory column is missing from the input file."""


class ParseError(ValueError):
    """A row could not be parsed; carries the 1-based data row number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class InspectionRecord:
    equipment_id: str
    item_id: str
    timestamp: date
    value: float
    install_date: date
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("value must be finite")
        if self.timestamp < self.install_date:
            raise ValueError("timestamp precedes install_date")


@dataclass(frozen=True)
class TransitionInterval:
    pump_index: int
    prev_state: int
    next_state: int
    moved: bool
    dt_days: float
    covariates: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.dt_days <= 0:
            raise ValueError("dt_days must be positive")
        if self.moved != (self.next_state > self.prev_state):
            raise ValueError("moved flag inconsistent with states")
        if not np.all(np.isfinite(self.covariates)):
            raise ValueError("covariates must be finite")


@dataclass
class IntervalData:
    """Array view of an interval list, shared by the likelihood code."""

    pump: np.ndarray       # (n,) int
    prev_state: np.ndarray  # (n,) int, 1-based
    moved: np.ndarray      # (n,) bool
    dt: np.ndarray         # (n,) float days
    x: np.ndarray          # (n, p) float

    @classmethod
    def from_intervals(cls, intervals) -> "IntervalData":
        if isinstance(intervals, IntervalData):
            return intervals
        intervals = list(intervals)
        if not intervals:
            raise ValueError("empty interval list")
        p = intervals[0].covariates.size
        return cls(
            pump=np.array([iv.pump_index for iv in intervals], dtype=int),
            prev_state=np.array([iv.prev_state for iv in intervals], dtype=int),
            moved=np.array([iv.moved for iv in intervals], dtype=bool),
            dt=np.array([iv.dt_days for iv in intervals], dtype=float),
            x=np.array([iv.covariates for iv in intervals], dtype=float).reshape(len(intervals), p),
        )

    @property
    def n(self) -> int:
        return self.pump.size

    @property
    def n_pumps(self) -> int:
        return int(self.pump.max()) + 1

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]


def _parse_date(text: str, row: int, column: str) -> date:
    try:
        return datetime.strptime(text.strip(), "%Y-%m-%d").date()
    except ValueError as exc:
        raise ParseError(row, f"bad {column} {text!r}: {exc}") from None


def parse_records(path: str | Path, schema: dict | None = None) -> list[InspectionRecord]:
    """Parse an inspection CSV into sorted, de-duplicated records.

    `schema` maps logical names (equipment_id, item_id, date, value,
    install_date) to the file's column headers. Duplicate
    (equipment, item, timestamp) rows keep the last occurrence.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in MANDATORY:
            if cols[name] not in header:
                raise SchemaError(f"missing mandatory column {cols[name]!r}")
        has_item = cols["item_id"] in header
        has_install = cols["install_date"] in header
        emb_cols = sorted(
            (c for c in header if c.startswith("emb_")),
            key=lambda c: int(c.split("_", 1)[1]),
        )

        raw = []
        for rownum, row in enumerate(reader, start=1):
            try:
                value = float(row[cols["value"]])
            except (TypeError, ValueError):
                raise ParseError(rownum, f"bad value {row[cols['value']]!r}") from None
            if not np.isfinite(value):
                raise ParseError(rownum, f"non-finite value {value!r}")
            ts = _parse_date(row[cols["date"]], rownum, "date")
            install = None
            if has_install and row[cols["install_date"]].strip():
                install = _parse_date(row[cols["install_date"]], rownum, "install_date")
            emb = None
            if emb_cols:
                try:
                    emb = np.array([float(row[c]) for c in emb_cols])
                except (TypeError, ValueError):
                    raise ParseError(rownum, "bad embedding entry") from None
            raw.append(
                {
                    "equipment_id": row[cols["equipment_id"]],
                    "item_id": row[cols["item_id"]] if has_item else "",
                    "timestamp": ts,
                    "value": value,
                    "install_date": install,
                    "embedding": emb,
                }
            )

    # install_date defaults to the series minimum date
    min_date: dict[tuple, date] = {}
    for r in raw:
        key = (r["equipment_id"], r["item_id"])
        if key not in min_date or r["timestamp"] < min_date[key]:
            min_date[key] = r["timestamp"]

    # keep-last duplicate collapse, then sort
    dedup: dict[tuple, dict] = {}
    for r in raw:
        dedup[(r["equipment_id"], r["item_id"], r["timestamp"])] = r
    records = [
        InspectionRecord(
            equipment_id=r["equipment_id"],
            item_id=r["item_id"],
            timestamp=r["timestamp"],
            value=r["value"],
            install_date=r["install_date"] or min_date[(r["equipment_id"], r["item_id"])],
            embedding=r["embedding"],
        )
        for r in dedup.values()
    ]
    records.sort(key=lambda r: (r.equipment_id, r.item_id, r.timestamp))
    return records


def group_series(records: list[InspectionRecord]) -> dict[tuple[str, str], list[InspectionRecord]]:
    series: dict[tuple[str, str], list[InspectionRecord]] = {}
    for r in records:
        series.setdefault((r.equipment_id, r.item_id), []).append(r)
    for key in series:
        series[key].sort(key=lambda r: r.timestamp)
    return series


def pump_indices(records: list[InspectionRecord]) -> dict[str, int]:
    """Stable pump index per equipment_id, ordered by sorted id."""
    ids = sorted({r.equipment_id for r in records})
    return {eid: i for i, eid in enumerate(ids)}


def build_intervals(
    records: list[InspectionRecord],
    states: list[int],
    covariates: np.ndarray | None = None,
    n_states: int | None = None,
) -> list[TransitionInterval]:
    """Derive one interval per consecutive record pair within a series.

    `states` aligns 1:1 with `records`; the top state K is absorbing and
    contributes no interval. `covariates` (optional, one row per record)
    are attached from the interval's starting record. Non-positive dt pairs
    are dropped with a warning.
    """
    if len(states) != len(records):
        raise ValueError("states must align 1:1 with records")
    states = [int(s) for s in states]
    k_max = n_states if n_states is not None else (max(states) if states else 0)
    idx_of = {id(r): i for i, r in enumerate(records)}
    pumps = pump_indices(records)
    intervals: list[TransitionInterval] = []
    dropped = 0
    for _, series in group_series(records).items():
        for prev, cur in zip(series, series[1:]):
            i_prev, i_cur = idx_of[id(prev)], idx_of[id(cur)]
            s_prev, s_cur = states[i_prev], states[i_cur]
            if s_prev >= k_max:
                continue  # absorbing top state
            dt = (cur.timestamp - prev.timestamp).days
            if dt <= 0:
                dropped += 1
                continue
            x = covariates[i_prev] if covariates is not None else np.empty(0)
            intervals.append(
                TransitionInterval(
                    pump_index=pumps[prev.equipment_id],
                    prev_state=s_prev,
                    next_state=s_cur,
                    moved=s_cur > s_prev,
                    dt_days=float(dt),
                    covariates=np.asarray(x, dtype=float),
                )
            )
    if dropped:
        log.warning("dropped %d intervals with non-positive dt", dropped)
    return intervals


# ---------------------------------------------------------------------------
# interval table IO
# ---------------------------------------------------------------------------

def write_intervals_csv(intervals: list[TransitionInterval], path: str | Path) -> None:
    p = len(intervals[0].covariates) if intervals else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["pump_index", "prev_state", "next_state", "moved", "dt_days"]
            + [f"x_{j}" for j in range(p)]
        )
        for iv in intervals:
            writer.writerow(
                [iv.pump_index, iv.prev_state, iv.next_state, int(iv.moved), repr(iv.dt_days)]
                + [repr(float(v)) for v in iv.covariates]
            )


def read_intervals_csv(path: str | Path) -> list[TransitionInterval]:
    intervals = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        xcols = sorted(
            (c for c in (reader.fieldnames or []) if c.startswith("x_")),
            key=lambda c: int(c.split("_", 1)[1]),
        )
        for row in reader:
            intervals.append(
                TransitionInterval(
                    pump_index=int(row["pump_index"]),
                    prev_state=int(row["prev_state"]),
                    next_state=int(row["next_state"]),
                    moved=bool(int(row["moved"])),
                    dt_days=float(row["dt_days"]),
                    covariates=np.array([float(row[c]) for c in xcols]),
                )
            )
    return intervals


def write_intervals_jsonl(intervals: list[TransitionInterval], path: str | Path) -> None:
    with open(path, "w") as fh:
        for iv in intervals:
            fh.write(
                json.dumps(
                    {
                        "pump_index": iv.pump_index,
                        "prev_state": iv.prev_state,
                        "next_state": iv.next_state,
                        "moved": iv.moved,
                        "dt_days": iv.dt_days,
                        "covariates": [float(v) for v in iv.covariates],
                    }
                )
                + "\n"
            )
