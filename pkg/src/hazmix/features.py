"""30-dimensional covariate construction per inspection.

Feature groups, in frozen order: 7 basic (age, normalized value, 90-day
trend slope, cv, 3 embedding PCA components), 11 distribution moments,
5 trend, 7 volatility. Windowed statistics use calendar-day windows over
irregular records; anything undefined for its window (< 3 points, zero
denominator, non-finite) falls back to 0.0, which makes the computation
total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .ingest import InspectionRecord

FEATURE_NAMES: tuple[str, ...] = (
    # basic (7)
    "age_days", "value_norm", "trend_slope", "cv",
    "text_emb_pca_0", "text_emb_pca_1", "text_emb_pca_2",
    # distribution moments, 90-day window (11)
    "mean", "std", "min", "max", "median", "q25", "q75", "iqr",
    "skewness", "kurtosis", "cv_90d",
    # trend (5)
    "trend_slope_90d", "trend_intercept",
    "recent_vs_past_ratio", "recent_vs_past_diff", "recent_change_rate",
    # volatility (7)
    "diff_mean", "diff_abs_mean",
    "rolling_std_7d_mean", "rolling_std_14d_mean", "rolling_std_30d_mean",
    "max_drawdown", "mean_drawdown",
)
N_FEATURES = len(FEATURE_NAMES)  # 30


@dataclass(frozen=True)
class CovariateRow:
    x: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if x.size != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray                      # (d,)
    components: np.ndarray                # (k, d), orthonormal rows
    explained_variance_ratio: np.ndarray  # (k,)

    def transform(self, emb: np.ndarray) -> np.ndarray:
        return (np.asarray(emb, dtype=float) - self.mean) @ self.components.T

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean.tolist(),
                "components": self.components.tolist(),
                "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        obj = json.loads(text)
        return cls(
            mean=np.array(obj["mean"]),
            components=np.array(obj["components"]),
            explained_variance_ratio=np.array(obj["explained_variance_ratio"]),
        )


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    sds: np.ndarray  # zero entries replaced by 1 before division

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.means) / self.sds

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.sds + self.means

    def to_json(self) -> str:
        return json.dumps({"means": self.means.tolist(), "sds": self.sds.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Standardizer":
        obj = json.loads(text)
        return cls(means=np.array(obj["means"]), sds=np.array(obj["sds"]))


def _safe(value: float) -> float:
    return float(value) if np.isfinite(value) else 0.0


def _slope_intercept(days: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if y.size < 3 or np.ptp(days) == 0:
        return 0.0, 0.0
    slope, intercept = np.polyfit(days, y, 1)
    return _safe(slope), _safe(intercept)


def fit_pca(embeddings: np.ndarray, k: int = 3) -> PcaModel:
    """Top-k PCA of the mean-centered embedding matrix.

    Sign convention: the largest-magnitude entry of each component is
    positive, keeping projections deterministic across runs.
    """
    emb = np.asarray(embeddings, dtype=float)
    n, d = emb.shape
    if n < k:
        raise ValueError(f"need at least {k} rows, got {n}")
    mean = emb.mean(axis=0)
    centered = emb - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    var = s**2
    ratio = var[:k] / var.sum() if var.sum() > 0 else np.zeros(k)
    return PcaModel(mean=mean, components=comps, explained_variance_ratio=ratio)


def compute_features(
    series: list[InspectionRecord],
    window_days: int = 90,
    y_max: float | None = None,
    pca: PcaModel | None = None,
) -> CovariateRow:
    """Covariates for the last record of one equipment's series.

    `y_max` is the frozen global corpus maximum backing value_norm; it
    defaults to the series maximum when fitting context is unavailable.
    """
    if not series:
        raise ValueError("series must be non-empty")
    cur = series[-1]
    t0 = cur.timestamp
    all_days = np.array([(r.timestamp - t0).days for r in series], dtype=float)
    all_y = np.array([r.value for r in series], dtype=float)

    in_win = all_days >= -window_days
    days = all_days[in_win]
    y = all_y[in_win]
    windowed = y.size >= 3

    out = np.zeros(N_FEATURES)
    f = dict.fromkeys(FEATURE_NAMES, 0.0)

    # --- basic
    f["age_days"] = float((t0 - cur.install_date).days)
    ymax = y_max if y_max is not None else float(np.max(all_y))
    if ymax != 0:
        f["value_norm"] = _safe(cur.value / ymax)
    if pca is not None and cur.embedding is not None:
        proj = pca.transform(cur.embedding)
        for j in range(min(3, proj.size)):
            f[f"text_emb_pca_{j}"] = _safe(proj[j])

    if windowed:
        slope, intercept = _slope_intercept(days, y)
        mean = float(np.mean(y))
        std = float(np.std(y, ddof=1))
        f["trend_slope"] = slope
        if mean != 0:
            f["cv"] = _safe(std / mean)

        # --- moments
        f["mean"] = mean
        f["std"] = std
        f["min"] = float(np.min(y))
        f["max"] = float(np.max(y))
        f["median"] = float(np.median(y))
        q25, q75 = np.percentile(y, [25, 75])
        f["q25"], f["q75"], f["iqr"] = float(q25), float(q75), float(q75 - q25)
        f["skewness"] = _safe(sps.skew(y))
        f["kurtosis"] = _safe(sps.kurtosis(y))
        f["cv_90d"] = f["cv"]

        # --- trend
        f["trend_slope_90d"] = slope
        f["trend_intercept"] = intercept
        recent = y[days >= -30]
        past = y[(days >= -60) & (days < -30)]
        if recent.size and past.size:
            pm = float(np.mean(past))
            rm = float(np.mean(recent))
            if pm != 0:
                f["recent_vs_past_ratio"] = _safe(rm / pm)
            f["recent_vs_past_diff"] = rm - pm
        # last record vs the record closest to 10 observations back
        if y.size >= 2:
            j = max(0, y.size - 1 - 10)
            gap = days[-1] - days[j]
            if gap > 0:
                f["recent_change_rate"] = _safe((y[-1] - y[j]) / gap)

        # --- volatility
        dy = np.diff(y)
        if dy.size:
            f["diff_mean"] = float(np.mean(dy))
            f["diff_abs_mean"] = float(np.mean(np.abs(dy)))
        for w in (7, 14, 30):
            stds = []
            for t in days:
                sub = y[(days >= t) & (days <= t + w)]
                if sub.size >= 2:
                    stds.append(np.std(sub, ddof=1))
            if stds:
                f[f"rolling_std_{w}d_mean"] = _safe(np.mean(stds))
        runmax = np.maximum.accumulate(y)
        dd = runmax - y
        f["max_drawdown"] = float(np.max(dd))
        f["mean_drawdown"] = float(np.mean(dd))

    for i, name in enumerate(FEATURE_NAMES):
        out[i] = _safe(f[name])
    return CovariateRow(x=out)


def compute_feature_matrix(
    series: list[InspectionRecord],
    window_days: int = 90,
    y_max: float | None = None,
    pca: PcaModel | None = None,
) -> np.ndarray:
    """One covariate row per record, using only history up to that record."""
    rows = [
        compute_features(series[: j + 1], window_days=window_days, y_max=y_max, pca=pca).x
        for j in range(len(series))
    ]
    return np.array(rows)


def standardize(rows: list[CovariateRow]) -> tuple[list[CovariateRow], Standardizer]:
    """Column-wise z-scoring; zero-sd columns pass through unchanged."""
    if not rows:
        raise ValueError("rows must be non-empty")
    mat = np.array([r.x for r in rows])
    means = mat.mean(axis=0)
    sds = mat.std(axis=0, ddof=0)
    means = np.where(sds == 0, 0.0, means)
    sds = np.where(sds == 0, 1.0, sds)
    std = Standardizer(means=means, sds=sds)
    return [CovariateRow(x=std.apply(r.x)) for r in rows], std


def write_feature_manifest(path: str | Path) -> None:
    Path(path).write_text(json.dumps(list(FEATURE_NAMES)))
