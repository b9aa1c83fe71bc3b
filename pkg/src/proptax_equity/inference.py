"""Bootstrap deltas, multiple-testing correction, Pareto classification and plot binning."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .errors import DegenerateStatistic, LengthMismatch, ValidationError
from .metrics import KERNELS

# Bootstrap replicates are generated in fixed-size blocks, each with its own
# RNG stream keyed on (seed, block index). Results therefore do not depend on
# how blocks are scheduled.
_BLOCK = 16


@dataclass(frozen=True)
class MetricDelta:
    statistic: str
    estimate: float
    ci: tuple[float, float]
    p_value: float
    se: float
    level: float
    b_outer: int
    b_inner: int
    paired: bool
    seed: int
    baseline: Optional[float] = None

    @property
    def excludes_zero(self) -> bool:
        return self.ci[0] > 0 or self.ci[1] < 0

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "estimate": self.estimate,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "p_value": self.p_value,
            "se": self.se,
            "level": self.level,
            "b_outer": self.b_outer,
            "b_inner": self.b_inner,
            "paired": self.paired,
            "seed": self.seed,
            "baseline": self.baseline,
        }


def ratio_statistic(name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a metric kernel so it reads columns (assessed, price[, weight]) from the last axis.

    The wrapper also carries ``from_counts(data, counts)``, which evaluates
    the metric on bootstrap multiplicities used as integer weights. Every
    ratio metric gives the same value on a resample and on its count vector,
    so the bootstrap never has to materialise resampled rows.
    """
    kernel = KERNELS[name]

    def stat(arr):
        w = arr[..., 2] if arr.shape[-1] > 2 else None
        return kernel(arr[..., 0], arr[..., 1], w)

    def from_counts(arr, counts):
        w = counts if arr.shape[-1] <= 2 else counts * arr[:, 2]
        return kernel(arr[:, 0], arr[:, 1], w)

    stat.__name__ = name
    stat.from_counts = from_counts
    return stat


def mean_statistic(arr):
    return arr.mean(axis=-1)


def _mean_from_counts(arr, counts):
    return counts @ arr / counts.sum(axis=-1)


mean_statistic.from_counts = _mean_from_counts


@numba.njit(cache=True)
def _counts(idx, n):
    """Multiplicity of each of ``n`` rows in every resample (row of ``idx``)."""
    out = np.zeros((idx.shape[0], n))
    for k in range(idx.shape[0]):
        for i in range(idx.shape[1]):
            out[k, idx[k, i]] += 1.0
    return out


@numba.njit(cache=True)
def _inner_counts(outer, inner, n):
    """Row multiplicities of inner resamples drawn from positions of each outer resample."""
    out = np.zeros((inner.shape[0], inner.shape[1], n))
    for k in range(inner.shape[0]):
        for j in range(inner.shape[1]):
            for i in range(inner.shape[2]):
                out[k, j, outer[k, inner[k, j, i]]] += 1.0
    return out


def _resample(data, idx):
    # data is (n,) or (n, k); idx is (..., n)
    return data[idx]


def _block_rng(seed, stream, block):
    return np.random.default_rng([seed, stream, block])


def _outer_indices(n, b_outer, seed, stream):
    out = []
    for block in range(0, b_outer, _BLOCK):
        size = min(_BLOCK, b_outer - block)
        out.append(_block_rng(seed, stream, block // _BLOCK).integers(0, n, size=(size, n)))
    return np.concatenate(out, axis=0)


def studentized_bootstrap_delta(
    statistic: Callable[[np.ndarray], np.ndarray],
    data_a,
    data_b,
    *,
    paired: bool = True,
    b_outer: int = 999,
    b_inner: int = 100,
    level: float = 0.95,
    seed: int = 0,
    name: Optional[str] = None,
) -> MetricDelta:
    """Studentized bootstrap CI and p-value for ``statistic(data_b) - statistic(data_a)``.

    ``statistic`` must reduce over the row axis and accept a leading batch
    axis: for 1-D data it receives ``(..., n)``, for 2-D data ``(..., n, k)``.
    In paired mode rows of both datasets are resampled together.

    Each outer replicate is standardised by the standard deviation of
    ``b_inner`` inner resamples drawn from it. The CI inverts the resulting
    pivot distribution; the p-value is the smallest two-sided level whose CI
    excludes zero.

    If the two datasets are identical in paired mode, every replicate delta
    is exactly zero and the result is an exact null (CI (0, 0), p = 1).
    """
    a = np.asarray(data_a, dtype=float)
    b = np.asarray(data_b, dtype=float)
    if b_outer < 199:
        raise ValidationError("b_outer must be at least 199")
    if b_inner < 2:
        raise ValidationError("b_inner must be at least 2")
    if not 0 < level < 1:
        raise ValidationError("level must be in (0, 1)")
    if paired and a.shape[0] != b.shape[0]:
        raise LengthMismatch("paired resampling needs equal row counts")
    name = name or getattr(statistic, "__name__", "statistic")
    base = float(statistic(a))
    estimate = float(statistic(b)) - base
    common = dict(statistic=name, level=level, b_outer=b_outer, b_inner=b_inner,
                  paired=paired, seed=seed, baseline=base)

    if paired and np.array_equal(a, b):
        return MetricDelta(estimate=0.0, ci=(0.0, 0.0), p_value=1.0, se=0.0, **common)

    na, nb = a.shape[0], b.shape[0]
    idx_a = _outer_indices(na, b_outer, seed, 0)
    idx_b = idx_a if paired else _outer_indices(nb, b_outer, seed, 1)

    from_counts = getattr(statistic, "from_counts", None)
    thetas = np.empty(b_outer)
    inner_se = np.empty(b_outer)
    for block in range(0, b_outer, _BLOCK):
        stop = min(block + _BLOCK, b_outer)
        ia, ib = idx_a[block:stop], idx_b[block:stop]
        rng = _block_rng(seed, 2, block // _BLOCK)
        # inner resamples index into each outer resample
        ja = rng.integers(0, na, size=(stop - block, b_inner, na))
        jb = ja if paired else rng.integers(0, nb, size=(stop - block, b_inner, nb))
        if from_counts is None:
            outer = statistic(_resample(b, ib)) - statistic(_resample(a, ia))
            inner_a = np.take_along_axis(ia[:, None, :], ja, axis=-1)
            inner_b = np.take_along_axis(ib[:, None, :], jb, axis=-1)
            inner = statistic(_resample(b, inner_b)) - statistic(_resample(a, inner_a))
        else:
            ca, cia = _counts(ia, na), _inner_counts(ia, ja, na)
            cb, cib = (ca, cia) if paired else (_counts(ib, nb), _inner_counts(ib, jb, nb))
            outer = from_counts(b, cb) - from_counts(a, ca)
            inner = from_counts(b, cib) - from_counts(a, cia)
        thetas[block:stop] = outer
        inner_se[block:stop] = inner.std(axis=-1, ddof=1)

    se = float(thetas.std(ddof=1))
    if not np.isfinite(se) or se <= 0 or not np.isfinite(estimate):
        raise DegenerateStatistic(f"{name}: bootstrap distribution has zero variance")
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (thetas - estimate) / inner_se
    t = t[np.isfinite(t)]
    if t.size < b_outer // 2:
        raise DegenerateStatistic(f"{name}: inner bootstrap standard errors are degenerate")

    alpha = 1.0 - level
    q_lo, q_hi = np.quantile(t, [alpha / 2, 1 - alpha / 2])
    low = min(estimate - q_hi * se, estimate)
    high = max(estimate - q_lo * se, estimate)

    t0 = estimate / se
    m = t.size
    upper = (1 + np.count_nonzero(t >= t0)) / (m + 1)
    lower = (1 + np.count_nonzero(t <= t0)) / (m + 1)
    p = float(min(1.0, 2 * min(upper, lower)))
    return MetricDelta(estimate=estimate, ci=(float(low), float(high)), p_value=p, se=se, **common)


def percentile_bootstrap_ci(statistic, data, *, b: int = 999, level: float = 0.95, seed: int = 0):
    """Percentile-bootstrap interval for ``statistic(data)``."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] == 0:
        return (float("nan"), float("nan"))
    idx = _outer_indices(data.shape[0], b, seed, 3)
    reps = statistic(_resample(data, idx))
    alpha = 1.0 - level
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


# --------------------------------------------------------------------------
# multiple testing

def benjamini_hochberg(p_values: Sequence[float], alpha: float = 0.05):
    """Step-up FDR control. Returns (reject flags, adjusted p-values) in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1:
        raise ValidationError("p_values must be one-dimensional")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValidationError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    below = ranked <= ranks * alpha / m
    reject = np.zeros(m, dtype=bool)
    if below.any():
        k = np.nonzero(below)[0].max()
        reject[order[: k + 1]] = True
    adj_sorted = np.minimum.accumulate((ranked * m / ranks)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adj_sorted, 1.0)
    return reject, adjusted


# --------------------------------------------------------------------------
# Pareto classification

class Direction(str, Enum):
    LOWER = "lower"
    HIGHER = "higher"
    TOWARD_ONE = "toward_one"
    TOWARD_ZERO = "toward_zero"


METRIC_DIRECTIONS = {
    "mape": Direction.LOWER,
    "rmse": Direction.LOWER,
    "mae": Direction.LOWER,
    "prd": Direction.TOWARD_ONE,
    "lc": Direction.TOWARD_ZERO,
    "suits": Direction.TOWARD_ZERO,
}

_TARGETS = {Direction.TOWARD_ONE: 1.0, Direction.TOWARD_ZERO: 0.0}


def improves(direction: Direction, delta: float, baseline: Optional[float] = None) -> tuple[bool, bool]:
    """Whether a change of ``delta`` is an improvement, and whether it overshoots the target.

    For target-seeking metrics (PRD toward 1, LC and Suits toward 0) a change
    counts as an improvement only if it reduces the distance to the target.
    Without a baseline the regressive side is assumed (PRD above 1, LC and
    Suits below 0).
    """
    direction = Direction(direction)
    if direction is Direction.LOWER:
        return delta < 0, False
    if direction is Direction.HIGHER:
        return delta > 0, False
    target = _TARGETS[direction]
    if baseline is None:
        return (delta < 0 if direction is Direction.TOWARD_ONE else delta > 0), False
    before = baseline - target
    after = baseline + delta - target
    crossed = before != 0 and np.sign(after) == -np.sign(before)
    return abs(after) < abs(before), bool(crossed)


class ParetoClass(str, Enum):
    JOINT_GAIN = "joint_gain"
    TRADEOFF = "tradeoff"
    JOINT_LOSS = "joint_loss"
    MIXED_INSIGNIFICANT = "mixed_insignificant"


@dataclass(frozen=True)
class ParetoOutcome:
    county_id: str
    accuracy: MetricDelta
    fairness: MetricDelta
    accuracy_improves: bool
    fairness_improves: bool
    bh_significant: tuple[bool, bool]
    classification: ParetoClass
    crossed_target: bool = False


def pareto_classify(
    accuracy: MetricDelta,
    fairness: MetricDelta,
    bh_flags: tuple[bool, bool],
    *,
    accuracy_direction: Optional[Direction] = None,
    fairness_direction: Optional[Direction] = None,
    county_id: str = "",
) -> ParetoOutcome:
    acc_dir = accuracy_direction or METRIC_DIRECTIONS[accuracy.statistic]
    fair_dir = fairness_direction or METRIC_DIRECTIONS[fairness.statistic]
    acc_up, acc_cross = improves(acc_dir, accuracy.estimate, accuracy.baseline)
    fair_up, fair_cross = improves(fair_dir, fairness.estimate, fairness.baseline)
    sig = (bool(bh_flags[0]), bool(bh_flags[1]))
    if not all(sig):
        cls = ParetoClass.MIXED_INSIGNIFICANT
    elif acc_up and fair_up:
        cls = ParetoClass.JOINT_GAIN
    elif not acc_up and not fair_up:
        cls = ParetoClass.JOINT_LOSS
    else:
        cls = ParetoClass.TRADEOFF
    return ParetoOutcome(county_id, accuracy, fairness, acc_up, fair_up, sig, cls,
                         acc_cross or fair_cross)


# --------------------------------------------------------------------------
# binning

class FewerPointsThanBins(UserWarning):
    pass


@dataclass(frozen=True)
class BinnedSeries:
    keys: np.ndarray
    mean: np.ndarray
    count: np.ndarray
    x_mean: Optional[np.ndarray] = None
    ci_low: Optional[np.ndarray] = None
    ci_high: Optional[np.ndarray] = None
    poly_coef: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.keys)

    def rows(self) -> list[dict]:
        out = []
        for i in range(len(self.keys)):
            row = {"bin": self.keys[i].item(), "mean": self.mean[i].item(), "count": int(self.count[i])}
            if self.x_mean is not None:
                row["x_mean"] = self.x_mean[i].item()
            if self.ci_low is not None:
                row["ci_low"] = self.ci_low[i].item()
                row["ci_high"] = self.ci_high[i].item()
            out.append(row)
        return out

    def polyval(self, x):
        if self.poly_coef is None:
            raise ValueError("series carries no polynomial fit")
        return np.polynomial.polynomial.polyval(x, self.poly_coef)


def rank_bins(x, n_bins: int) -> np.ndarray:
    """Equal-count bin index for every point; ties are split by stable input order."""
    x = np.asarray(x, dtype=float)
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return ranks * n_bins // n


def quantile_binscatter(x, y, n_bins: int = 100) -> BinnedSeries:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch("x and y must be aligned")
    n = x.size
    if n == 0:
        empty = np.zeros(0)
        return BinnedSeries(np.zeros(0, dtype=int), empty, np.zeros(0, dtype=int), x_mean=empty)
    if n < n_bins:
        warnings.warn(f"{n} points for {n_bins} bins; using {n} bins", FewerPointsThanBins)
        n_bins = n
    bins = rank_bins(x, n_bins)
    count = np.bincount(bins, minlength=n_bins)
    y_mean = np.bincount(bins, weights=y, minlength=n_bins) / count
    x_mean = np.bincount(bins, weights=x, minlength=n_bins) / count
    return BinnedSeries(np.arange(n_bins), y_mean, count, x_mean=x_mean)


def _bin_means_with_ci(bins, values, n_bins, b, level, seed):
    means, lows, highs, counts = [], [], [], []
    for k in range(n_bins):
        v = values[bins == k]
        counts.append(v.size)
        means.append(v.mean() if v.size else np.nan)
        lo, hi = percentile_bootstrap_ci(mean_statistic, v, b=b, level=level, seed=seed + k)
        lows.append(lo)
        highs.append(hi)
    return np.array(means), np.array(counts), np.array(lows), np.array(highs)


def quintile_impact(sale_price, baseline_pred, alt_pred, *, groups=None, b: int = 999,
                    level: float = 0.95, seed: int = 0) -> tuple[BinnedSeries, BinnedSeries]:
    """Change in absolute percent error and in predicted price, by sale-price quintile.

    Quintiles are formed within each group (county) when ``groups`` is given.
    Each bin carries a percentile-bootstrap CI of its mean change.
    """
    s = np.asarray(sale_price, dtype=float)
    base = np.asarray(baseline_pred, dtype=float)
    alt = np.asarray(alt_pred, dtype=float)
    if not (s.shape == base.shape == alt.shape):
        raise LengthMismatch("sale_price and predictions must be aligned")
    bins = np.empty(s.size, dtype=np.int64)
    if groups is None:
        bins[:] = rank_bins(s, 5) if s.size else 0
    else:
        groups = np.asarray(groups)
        for g in dict.fromkeys(groups.tolist()):
            mask = groups == g
            bins[mask] = rank_bins(s[mask], 5)
    d_ape = 100.0 * (np.abs(alt - s) - np.abs(base - s)) / s
    d_price = alt - base
    keys = np.arange(1, 6)
    out = []
    for values, stream in ((d_ape, 0), (d_price, 1)):
        mean, count, lo, hi = _bin_means_with_ci(bins, values, 5, b, level, seed * 10 + stream)
        out.append(BinnedSeries(keys, mean, count, ci_low=lo, ci_high=hi))
    return out[0], out[1]


def group_delta_curve(attribute, delta, *, n_bins: int = 20, degree: int = 2,
                      weights=None) -> BinnedSeries:
    """Mean change per equal-width bin of a block-group attribute, plus a polynomial fit.

    The polynomial is a least-squares fit on the block-group points (not on the
    bin means); coefficients are stored lowest order first.
    """
    x = np.asarray(attribute, dtype=float)
    y = np.asarray(delta, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch("attribute and delta must be aligned")
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    w = None if weights is None else np.asarray(weights, dtype=float)[ok]
    if x.size == 0:
        empty = np.zeros(0)
        return BinnedSeries(empty, empty, np.zeros(0, dtype=int))
    lo, hi = x.min(), x.max()
    if hi == lo:
        edges = np.array([lo - 0.5, hi + 0.5])
        n_bins = 1
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
    bins = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    count = np.bincount(bins, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.bincount(bins, weights=y, minlength=n_bins) / count
    mids = (edges[:-1] + edges[1:]) / 2
    keep = count > 0
    deg = min(degree, max(0, np.unique(x).size - 1))
    coef = np.polynomial.polynomial.polyfit(x, y, deg, w=None if w is None else np.sqrt(w))
    coef = np.pad(coef, (0, degree + 1 - coef.size))
    return BinnedSeries(mids[keep], mean[keep], count[keep], poly_coef=coef,
                        meta={"range": (float(lo), float(hi))})


def fitted_zero_crossings(series: BinnedSeries) -> list[float]:
    """Real roots of the fitted curve that fall inside the attribute range."""
    lo, hi = series.meta.get("range", (series.keys.min(), series.keys.max()))
    coef = np.trim_zeros(np.asarray(series.poly_coef, dtype=float), "b")
    if coef.size < 2:
        return []
    roots = np.polynomial.polynomial.polyroots(coef)
    return sorted(float(r.real) for r in roots if abs(r.imag) < 1e-12 and lo <= r.real <= hi)


# --------------------------------------------------------------------------
# display censoring

def censor_mask(*columns, pcts: tuple[float, float] = (0.02, 0.98)) -> np.ndarray:
    """True for points within the percentile range of every column."""
    if not columns:
        raise ValidationError("need at least one column")
    n = np.asarray(columns[0]).size
    keep = np.ones(n, dtype=bool)
    if n == 0:
        return keep
    for col in columns:
        col = np.asarray(col, dtype=float)
        lo, hi = np.quantile(col, pcts)
        keep &= (col >= lo) & (col <= hi)
    return keep


def censor_for_display(series, pcts: tuple[float, float] = (0.02, 0.98)) -> np.ndarray:
    """Drop (not clamp) points outside the percentile range. For plot output only."""
    x = np.asarray(series, dtype=float)
    return x[censor_mask(x, pcts=pcts)]
