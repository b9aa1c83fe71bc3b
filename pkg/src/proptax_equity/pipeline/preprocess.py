"""Feature preprocessing: time-of-sale encoding, one-hot, sparse-column drop, MICE, winsorize + z-score.

Everything that learns from data (category floors, missingness, imputation
regressions, winsor bounds, means and standard deviations) is fitted on the
training rows only and replayed on new rows by ``FeaturePipeline.transform``.
"""

from __future__ import annotations

import datetime as dt
import math
import numbers
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..domain import CountyPanel
from ..errors import AllMissingColumn, SchemaMismatch, SingleYearPanel, ValidationError, ZeroVarianceColumn

TIME_PREFIX = "time_"


@dataclass(frozen=True)
class PipelineConfig:
    category_floor: float = 0.05
    missing_drop_threshold: float = 0.50
    winsor_percentiles: tuple[float, float] = (0.01, 0.99)
    winsor_exempt_prefixes: tuple[str, ...] = (TIME_PREFIX,)
    mice_iterations: int = 5
    cv_folds: int = 5
    tuner_budget: int = 12
    n_trees: int = 200
    max_features: Optional[float] = None
    min_samples_leaf: int = 5
    lasso_tol: float = 1e-7
    lasso_max_sweeps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.category_floor < 1:
            raise ValidationError("category_floor must be in (0, 1)")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be >= 2")
        if not 0 <= self.missing_drop_threshold <= 1:
            raise ValidationError("missing_drop_threshold must be in [0, 1]")
        lo, hi = self.winsor_percentiles
        if not 0 <= lo < hi <= 1:
            raise ValidationError("winsor_percentiles must satisfy 0 <= low < high <= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        d = dict(d)
        for key in ("winsor_percentiles", "winsor_exempt_prefixes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ColumnMeta:
    name: str
    source: str
    kind: str  # "numeric", "indicator" or "time"
    category: Optional[str] = None
    imputed: bool = False
    winsor_bounds: Optional[tuple[float, float]] = None
    mean: Optional[float] = None
    sd: Optional[float] = None


@dataclass
class FeatureMatrix:
    values: np.ndarray
    columns: list[str]
    meta: dict[str, ColumnMeta] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.columns.index(c) for c in names]
        return FeatureMatrix(self.values[:, idx], list(names), {c: self.meta[c] for c in names})


# --------------------------------------------------------------------------
# chronological split

@dataclass(frozen=True)
class SplitPlan:
    train: np.ndarray
    test: np.ndarray
    test_year: int


def chronological_split(panel: CountyPanel) -> SplitPlan:
    """Hold out the most recent calendar year; train on everything before it."""
    years = np.array([r.sale_date.year for r in panel.records])
    if np.unique(years).size < 2:
        raise SingleYearPanel(f"county {panel.county_id} spans a single year")
    last = int(years.max())
    return SplitPlan(np.flatnonzero(years < last), np.flatnonzero(years == last), last)


# --------------------------------------------------------------------------
# time-of-sale features

def time_features(dates: Sequence[dt.date], origin: dt.date) -> dict[str, np.ndarray]:
    """Six sale-timing columns: year, three quarter dummies, month within quarter, days since origin."""
    year = np.array([d.year for d in dates], dtype=float)
    month = np.array([d.month for d in dates])
    quarter = (month - 1) // 3 + 1
    return {
        f"{TIME_PREFIX}year": year,
        f"{TIME_PREFIX}q2": (quarter == 2).astype(float),
        f"{TIME_PREFIX}q3": (quarter == 3).astype(float),
        f"{TIME_PREFIX}q4": (quarter == 4).astype(float),
        f"{TIME_PREFIX}month_of_quarter": ((month - 1) % 3 + 1).astype(float),
        f"{TIME_PREFIX}days": np.array([(d - origin).days for d in dates], dtype=float),
    }


# --------------------------------------------------------------------------
# raw column handling

def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def _is_number(v) -> bool:
    return isinstance(v, numbers.Real) and not isinstance(v, bool)


def infer_column_kinds(rows: Sequence[Mapping]) -> dict[str, str]:
    """'numeric' if every observed value is a number, else 'categorical'. Key order is first-seen."""
    kinds: dict[str, str] = {}
    for row in rows:
        for k, v in row.items():
            if k not in kinds:
                kinds[k] = "numeric"
            if not _is_missing(v) and not _is_number(v):
                kinds[k] = "categorical"
    return kinds


def one_hot_encode(raw: Mapping[str, Sequence], category_floor: float = 0.05,
                   categories: Optional[Mapping[str, list[str]]] = None) -> FeatureMatrix:
    """Indicator columns for categories seen in at least ``category_floor`` of rows.

    Rows whose source value is missing get NaN in every indicator of that
    source, so the imputer handles them. Rows holding a dropped (rare)
    category are all zeros. Pass ``categories`` to replay a fitted encoding.
    """
    cols, blocks, meta = [], [], {}
    n = None
    for name, values in raw.items():
        values = list(values)
        n = len(values)
        if categories is not None:
            kept = list(categories.get(name, []))
        else:
            counts: dict[str, int] = {}
            for v in values:
                if not _is_missing(v):
                    counts[str(v)] = counts.get(str(v), 0) + 1
            kept = sorted(c for c, k in counts.items() if n and k / n >= category_floor)
        miss = np.array([_is_missing(v) for v in values], dtype=bool)
        as_str = np.array(["" if m else str(v) for v, m in zip(values, miss)], dtype=object)
        for c in kept:
            col = (as_str == c).astype(float)
            col[miss] = np.nan
            cname = f"{name}={c}"
            cols.append(cname)
            blocks.append(col)
            meta[cname] = ColumnMeta(cname, name, "indicator", category=c)
    n = 0 if n is None else n
    values = np.column_stack(blocks) if blocks else np.zeros((n, 0))
    return FeatureMatrix(values, cols, meta)


def drop_sparse_features(matrix: FeatureMatrix, threshold: float = 0.5) -> FeatureMatrix:
    """Remove columns whose missing fraction is strictly above ``threshold``."""
    if matrix.n == 0:
        return matrix
    frac = np.isnan(matrix.values).mean(axis=0)
    keep = [c for c, f in zip(matrix.columns, frac) if f <= threshold]
    return matrix.select(keep)


# --------------------------------------------------------------------------
# MICE

@dataclass
class MiceState:
    columns: list[str]
    kinds: list[str]
    fill: np.ndarray
    coef: dict[int, np.ndarray]
    iterations: int


def _ols_with_intercept(X, y):
    A = np.column_stack([np.ones(len(X)), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def _mode(col):
    vals, counts = np.unique(col, return_counts=True)
    return vals[np.argmax(counts)]


def mice_fit(matrix: FeatureMatrix, iterations: int = 5, seed: int = 0) -> tuple[FeatureMatrix, MiceState]:
    """Chained-equation imputation fitted on ``matrix``.

    Numeric columns are imputed by linear regression on every other column;
    indicator columns take the most frequent observed value. The sweep starts
    from column means/modes and runs ``iterations`` times. Observed entries
    are never changed. ``seed`` only fixes the (deterministic) procedure for
    reproducibility bookkeeping; no random draws are taken.
    """
    X = matrix.values.astype(float, copy=True)
    miss = np.isnan(X)
    kinds = [matrix.meta[c].kind if c in matrix.meta else "numeric" for c in matrix.columns]
    p = X.shape[1]
    fill = np.empty(p)
    for j in range(p):
        obs = X[~miss[:, j], j]
        if obs.size == 0:
            raise AllMissingColumn(f"column {matrix.columns[j]} has no observed values")
        fill[j] = _mode(obs) if kinds[j] == "indicator" else obs.mean()
        X[miss[:, j], j] = fill[j]

    numeric = [j for j in range(p) if kinds[j] != "indicator"]
    targets = [j for j in numeric if miss[:, j].any()]
    for _ in range(iterations if targets else 0):
        for j in targets:
            others = [k for k in range(p) if k != j]
            obs = ~miss[:, j]
            coef = _ols_with_intercept(X[obs][:, others], X[obs, j])
            X[miss[:, j], j] = coef[0] + X[miss[:, j]][:, others] @ coef[1:]

    # final regressions for every numeric column, used to impute new rows
    coef_all = {}
    for j in numeric:
        others = [k for k in range(p) if k != j]
        obs = ~miss[:, j]
        coef_all[j] = _ols_with_intercept(X[obs][:, others], X[obs, j])

    meta = {c: replace(matrix.meta[c], imputed=bool(miss[:, j].any())) if c in matrix.meta
            else ColumnMeta(c, c, "numeric", imputed=bool(miss[:, j].any()))
            for j, c in enumerate(matrix.columns)}
    state = MiceState(list(matrix.columns), kinds, fill, coef_all, iterations)
    return FeatureMatrix(X, list(matrix.columns), meta), state


def mice_impute(matrix: FeatureMatrix, iterations: int = 5, seed: int = 0) -> FeatureMatrix:
    return mice_fit(matrix, iterations, seed)[0]


def mice_apply(matrix: FeatureMatrix, state: MiceState) -> FeatureMatrix:
    """Impute new rows with regressions learned during ``mice_fit``."""
    X = matrix.values.astype(float, copy=True)
    miss = np.isnan(X)
    p = X.shape[1]
    for j in range(p):
        X[miss[:, j], j] = state.fill[j]
    targets = [j for j in state.coef if miss[:, j].any()]
    for _ in range(state.iterations if targets else 0):
        for j in targets:
            others = [k for k in range(p) if k != j]
            c = state.coef[j]
            X[miss[:, j], j] = c[0] + X[miss[:, j]][:, others] @ c[1:]
    return FeatureMatrix(X, list(matrix.columns), dict(matrix.meta))


# --------------------------------------------------------------------------
# winsorize and standardize

def winsorize_then_standardize(matrix: FeatureMatrix, pcts: tuple[float, float] = (0.01, 0.99),
                               exempt_prefixes: Sequence[str] = ()) -> FeatureMatrix:
    """Clamp each column to its percentile bounds, then z-score it.

    Bounds are empirical order statistics (inverted-CDF quantiles) of the
    fitting rows. Columns with zero spread after clamping are dropped with a
    ``ZeroVarianceColumn`` warning. Bounds, mean and sd are stored in the
    column metadata.
    """
    X = matrix.values.astype(float, copy=True)
    keep, meta = [], {}
    for j, c in enumerate(matrix.columns):
        m = replace(matrix.meta[c]) if c in matrix.meta else ColumnMeta(c, c, "numeric")
        col = X[:, j]
        if not any(c.startswith(pfx) for pfx in exempt_prefixes):
            lo, hi = np.quantile(col, pcts, method="inverted_cdf")
            col = np.clip(col, lo, hi)
            m.winsor_bounds = (float(lo), float(hi))
        mu = col.mean()
        sd = col.std()
        if not sd > 1e-12 * max(1.0, abs(mu)):
            warnings.warn(f"column {c} has zero variance and was dropped", ZeroVarianceColumn)
            continue
        X[:, j] = (col - mu) / sd
        m.mean, m.sd = float(mu), float(sd)
        keep.append(j)
        meta[c] = m
    cols = [matrix.columns[j] for j in keep]
    return FeatureMatrix(X[:, keep], cols, meta)


def apply_scaling(matrix: FeatureMatrix, meta: Mapping[str, ColumnMeta]) -> np.ndarray:
    out = np.empty_like(matrix.values)
    for j, c in enumerate(matrix.columns):
        m = meta[c]
        col = matrix.values[:, j]
        if m.winsor_bounds is not None:
            col = np.clip(col, *m.winsor_bounds)
        out[:, j] = (col - m.mean) / m.sd
    return out


# --------------------------------------------------------------------------
# the fitted pipeline

class FeaturePipeline:
    """Fit-on-train, replay-on-test preprocessing for dict-shaped rows.

    Columns named in ``report_only`` are never turned into features.
    """

    def __init__(self, config: PipelineConfig = PipelineConfig(), report_only: Iterable[str] = ()):
        self.config = config
        self.report_only = frozenset(report_only)
        self.fitted = False

    def _raw_columns(self, rows, names, kinds):
        numeric, categorical = {}, {}
        for name in names:
            values = [row.get(name) for row in rows]
            if kinds[name] == "categorical":
                categorical[name] = values
            else:
                numeric[name] = np.array([np.nan if _is_missing(v) else float(v) for v in values])
        return numeric, categorical

    def _assemble(self, rows, categories=None, floor=None):
        numeric, categorical = self._raw_columns(rows, self.sources_, self.kinds_)
        enc = one_hot_encode(categorical, floor if floor is not None else self.config.category_floor,
                             categories=categories)
        blocks, cols, meta = [], [], {}
        for name, col in numeric.items():
            kind = "time" if name.startswith(TIME_PREFIX) else "numeric"
            blocks.append(col)
            cols.append(name)
            meta[name] = ColumnMeta(name, name, kind)
        if enc.columns:
            blocks.append(enc.values)
            cols.extend(enc.columns)
            meta.update(enc.meta)
        values = np.column_stack(blocks) if blocks else np.zeros((len(rows), 0))
        return FeatureMatrix(values, cols, meta)

    def fit(self, rows: Sequence[Mapping]) -> FeatureMatrix:
        kinds = infer_column_kinds(rows)
        self.sources_ = [k for k in kinds if k not in self.report_only]
        self.kinds_ = {k: kinds[k] for k in self.sources_}
        full = self._assemble(rows)
        self.categories_ = {}
        for c in full.columns:
            m = full.meta[c]
            if m.kind == "indicator":
                self.categories_.setdefault(m.source, []).append(m.category)
        reduced = drop_sparse_features(full, self.config.missing_drop_threshold)
        imputed, self.mice_state_ = mice_fit(reduced, self.config.mice_iterations, self.config.seed)
        scaled = winsorize_then_standardize(imputed, self.config.winsor_percentiles,
                                            self.config.winsor_exempt_prefixes)
        self.imputed_columns_ = list(imputed.columns)
        self.columns_ = list(scaled.columns)
        self.meta_ = scaled.meta
        self.fitted = True
        return scaled

    @property
    def required_sources(self) -> list[str]:
        return sorted({self.meta_[c].source for c in self.imputed_columns_})

    def transform(self, rows: Sequence[Mapping]) -> FeatureMatrix:
        if not self.fitted:
            raise RuntimeError("pipeline is not fitted")
        present = set().union(*(row.keys() for row in rows)) if rows else set()
        absent = [s for s in self.required_sources if s not in present]
        if rows and absent:
            raise SchemaMismatch(f"rows lack fitted columns: {absent}")
        full = self._assemble(rows, categories=self.categories_)
        reduced = full.select(self.imputed_columns_)
        imputed = mice_apply(reduced, self.mice_state_)
        final = imputed.select(self.columns_)
        return FeatureMatrix(apply_scaling(final, self.meta_), list(self.columns_), dict(self.meta_))
