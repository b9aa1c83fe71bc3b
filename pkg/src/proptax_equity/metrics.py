"""Accuracy and regressivity metrics computed from (assessed, sale price) pairs.

Every metric has two entry points:

* a public function taking a sequence of ``RatioObservation`` (or a
  ``RatioData``) and returning a float, and
* an array kernel in ``KERNELS`` that works along the last axis, so the
  bootstrap can evaluate thousands of resamples in one call.

Percent quantities are reported in points: a MAPE of 7.5 means 7.5%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numba
import numpy as np

from .domain import RatioObservation
from .errors import DegenerateRegressor, EmptyInput, ValidationError

PRD_UPPER = 1.03
PRD_LOWER = 0.98


@dataclass(frozen=True)
class RatioData:
    """Column view of ratio observations: assessed values, prices and optional weights."""

    assessed: np.ndarray
    price: np.ndarray
    weight: Optional[np.ndarray] = None

    @classmethod
    def from_observations(cls, obs: Sequence[RatioObservation]) -> "RatioData":
        a = np.array([o.assessed for o in obs], dtype=float)
        s = np.array([o.price for o in obs], dtype=float)
        ws = [o.weight for o in obs]
        if any(w is not None for w in ws):
            w = np.array([1.0 if w is None else w for w in ws], dtype=float)
        else:
            w = None
        return cls(a, s, w)

    @classmethod
    def from_arrays(cls, assessed, price, weight=None) -> "RatioData":
        a = np.asarray(assessed, dtype=float)
        s = np.asarray(price, dtype=float)
        if a.shape != s.shape:
            raise ValidationError("assessed and price must have the same shape")
        w = None if weight is None else np.asarray(weight, dtype=float)
        return cls(a, s, w)

    def __len__(self) -> int:
        return self.assessed.shape[-1]


RatioInput = Union[RatioData, Sequence[RatioObservation]]


def as_ratio_data(obs: RatioInput) -> RatioData:
    if isinstance(obs, RatioData):
        return obs
    return RatioData.from_observations(obs)


# --------------------------------------------------------------------------
# array kernels (reduce over the last axis)

def _wmean(x, w):
    if w is None:
        return x.mean(axis=-1)
    return (x * w).sum(axis=-1) / w.sum(axis=-1)


def mape_kernel(a, s, w=None):
    return 100.0 * _wmean(np.abs(a - s) / s, w)


def rmse_kernel(a, s, w=None):
    return np.sqrt(_wmean((a - s) ** 2, w))


def mae_kernel(a, s, w=None):
    return _wmean(np.abs(a - s), w)


def prd_kernel(a, s, w=None):
    return _wmean(a / s, w) / (_wmean(a, w) / _wmean(s, w))


def lc_kernel(a, s, w=None):
    """(Weighted) OLS slope of log(a/s) on log(s)."""
    x = np.log(s)
    y = np.log(a) - x
    xm = _wmean(x, w)[..., None]
    ym = _wmean(y, w)[..., None]
    dx = x - xm
    if w is None:
        sxx = (dx * dx).sum(axis=-1)
        sxy = (dx * (y - ym)).sum(axis=-1)
    else:
        sxx = (w * dx * dx).sum(axis=-1)
        sxy = (w * dx * (y - ym)).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return sxy / sxx


@numba.njit(cache=True)
def _suits_rows(s_sorted, a_sorted, order, w):
    k, n = w.shape
    out = np.empty(k)
    for r in range(k):
        ts = 0.0
        ta = 0.0
        for i in range(n):
            wi = w[r, order[i]]
            ts += wi * s_sorted[i]
            ta += wi * a_sorted[i]
        area = 0.0
        cs = 0.0
        ca = 0.0
        px = 0.0
        py = 0.0
        for i in range(n):
            wi = w[r, order[i]]
            cs += wi * s_sorted[i]
            ca += wi * a_sorted[i]
            x = 100.0 * cs / ts
            y = 100.0 * ca / ta
            area += (x - px) * (y + py) / 2.0
            px = x
            py = y
        out[r] = 1.0 - area / 5000.0
    return out


def suits_kernel(a, s, w=None):
    """Suits index via trapezoids over the price-sorted cumulative shares.

    Weighted observations contribute ``w*s`` and ``w*a`` to the cumulative
    sums. Ties in price keep input order.
    """
    order = np.argsort(s, axis=-1, kind="stable")
    if s.ndim == 1:
        # one price vector, possibly many weight vectors (bootstrap counts)
        s_sorted, a_sorted = s[order], a[order]
    else:
        s_sorted = np.take_along_axis(s, order, axis=-1)
        a_sorted = np.take_along_axis(a, order, axis=-1)
    if w is not None and s.ndim == 1 and np.ndim(w) > 1:
        w2 = np.ascontiguousarray(w, dtype=float).reshape(-1, s.shape[-1])
        out = _suits_rows(np.ascontiguousarray(s_sorted, dtype=float),
                          np.ascontiguousarray(a_sorted, dtype=float), order, w2)
        return out.reshape(np.shape(w)[:-1])
    if w is not None:
        if s.ndim == 1:
            w_sorted = w[..., order]
        else:
            w_sorted = np.take_along_axis(np.broadcast_to(w, s.shape), order, axis=-1)
        s_sorted = s_sorted * w_sorted
        a_sorted = a_sorted * w_sorted
    cs = np.cumsum(s_sorted, axis=-1)
    ca = np.cumsum(a_sorted, axis=-1)
    x = 100.0 * cs / cs[..., -1:]
    y = 100.0 * ca / ca[..., -1:]
    zero = np.zeros(x.shape[:-1] + (1,))
    x = np.concatenate([zero, x], axis=-1)
    y = np.concatenate([zero, y], axis=-1)
    area = (np.diff(x, axis=-1) * (y[..., 1:] + y[..., :-1]) / 2.0).sum(axis=-1)
    return 1.0 - area / 5000.0


KERNELS = {
    "mape": mape_kernel,
    "rmse": rmse_kernel,
    "mae": mae_kernel,
    "prd": prd_kernel,
    "lc": lc_kernel,
    "suits": suits_kernel,
}

ACCURACY_METRICS = ("mape", "rmse", "mae")
FAIRNESS_METRICS = ("prd", "lc", "suits")


# --------------------------------------------------------------------------
# public scalar API

def _prepare(obs: RatioInput, min_n: int = 1) -> RatioData:
    data = as_ratio_data(obs)
    if len(data) < min_n:
        if len(data) == 0:
            raise EmptyInput("no observations")
        raise EmptyInput(f"need at least {min_n} observations, got {len(data)}")
    return data


def mape(obs: RatioInput) -> float:
    d = _prepare(obs)
    return float(mape_kernel(d.assessed, d.price, d.weight))


def rmse(obs: RatioInput) -> float:
    d = _prepare(obs)
    return float(rmse_kernel(d.assessed, d.price, d.weight))


def mae(obs: RatioInput) -> float:
    d = _prepare(obs)
    return float(mae_kernel(d.assessed, d.price, d.weight))


def prd(obs: RatioInput) -> float:
    """Mean ratio divided by the ratio of means."""
    d = _prepare(obs)
    return float(prd_kernel(d.assessed, d.price, d.weight))


def suits_index(obs: RatioInput) -> float:
    d = _prepare(obs, min_n=2)
    return float(suits_kernel(d.assessed, d.price, d.weight))


def log_coefficient(obs: RatioInput) -> tuple[float, float]:
    """Slope of log(A/S) on log(S) and its classical standard error.

    With weights the fit is weighted least squares and the standard error
    uses the weighted residual variance with n-2 degrees of freedom.
    """
    d = _prepare(obs, min_n=3)
    if np.any(d.assessed <= 0) or np.any(d.price <= 0):
        raise ValidationError("log coefficient needs strictly positive A and S")
    x = np.log(d.price)
    y = np.log(d.assessed) - x
    w = np.ones_like(x) if d.weight is None else d.weight
    xm = np.sum(w * x) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx <= 1e-14 * max(1.0, np.sum(w * x * x)):
        raise DegenerateRegressor("log sale price has zero variance")
    ym = np.sum(w * y) / w.sum()
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    resid = y - ym - slope * (x - xm)
    n = len(x)
    # weights normalised to sum to n so the SE matches OLS when they are equal
    wn = w * n / w.sum()
    sigma2 = np.sum(wn * resid**2) / (n - 2)
    se = math.sqrt(sigma2 / (sxx * n / w.sum()))
    return float(slope), float(se)


@dataclass(frozen=True)
class AccuracyReport:
    mape: float
    rmse: float
    mae: float
    n: int


@dataclass(frozen=True)
class RegressivityReport:
    log_coefficient: float
    log_coefficient_se: float
    suits_index: float
    prd: float
    n: int


def accuracy_report(obs: RatioInput) -> AccuracyReport:
    d = _prepare(obs)
    return AccuracyReport(mape(d), rmse(d), mae(d), len(d))


def regressivity_report(obs: RatioInput) -> RegressivityReport:
    d = _prepare(obs, min_n=3)
    lc, se = log_coefficient(d)
    return RegressivityReport(lc, se, suits_index(d), prd(d), len(d))


# --------------------------------------------------------------------------
# thresholds

class MetricKind(str, Enum):
    LC = "lc"
    SUITS = "suits"
    PRD = "prd"


@dataclass(frozen=True)
class RegressivityFlag:
    kind: MetricKind
    value: float
    is_regressive: bool
    rule: str


def classify_regressive(kind, value: float, ci: Optional[tuple[float, float]] = None) -> RegressivityFlag:
    """Apply the industry regressivity threshold for ``kind``.

    PRD is regressive strictly above 1.03. LC and Suits are regressive when
    significantly below zero, which here means the supplied confidence
    interval lies entirely below zero. Without a CI they are never flagged.
    """
    kind = MetricKind(kind)
    if not math.isfinite(value):
        raise ValidationError("value must be finite")
    if kind is MetricKind.PRD:
        return RegressivityFlag(kind, value, value > PRD_UPPER, "> 1.03 (strictly)")
    if ci is None:
        return RegressivityFlag(kind, value, False, "< 0 (significantly); no CI supplied")
    lo, hi = ci
    return RegressivityFlag(kind, value, value < 0 and hi < 0, "< 0 (significantly)")


# --------------------------------------------------------------------------
# effective tax rate identity

@dataclass(frozen=True)
class EtrComparison:
    statutory_rate: float
    effective_rate: float
    assessment_pct_error: float
    rate_pct_error: float


def etr_comparison(assessed: float, price: float, statutory_rate: float) -> EtrComparison:
    """Effective tax rate implied by charging ``statutory_rate`` on the assessment.

    With no exemptions, tax = rate * A = effective_rate * S, so the percent
    error of the assessment equals the percent error of the effective rate.
    """
    if assessed <= 0 or price <= 0 or statutory_rate <= 0:
        raise ValidationError("assessed, price and rate must all be positive")
    effective = statutory_rate * assessed / price
    a_err = 100.0 * (assessed - price) / price
    # excess tax over the statutory tax on market value; subtracting the two
    # rates directly loses digits when A is close to S
    r_err = 100.0 * (statutory_rate * (assessed - price)) / (statutory_rate * price)
    if not math.isclose(a_err, r_err, rel_tol=1e-9, abs_tol=1e-9):
        raise AssertionError(f"ETR identity violated: {a_err} != {r_err}")
    return EtrComparison(statutory_rate, effective, a_err, r_err)
