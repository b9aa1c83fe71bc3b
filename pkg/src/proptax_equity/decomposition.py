"""Covariance/MSE decomposition of the change in the log-coefficient fairness metric.

All moments use the population (1/n) convention. Under that convention

    cov(p, s) = (var(p) + (mean(p) - mean(s))**2 - mse(p, s) + var(s)) / 2

holds exactly, so the change in covariance between two prediction sets
splits into a variance term, a squared-mean-bias term and an accuracy term.
Because the log coefficient equals cov(p, s) / var(s) - 1 and var(s) is
shared, the sign of that change is the sign of the change in fairness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, TruthMismatch, ValidationError


@dataclass(frozen=True)
class LogPredictionSet:
    predictions: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.predictions, dtype=float)
        t = np.asarray(self.truth, dtype=float)
        if p.ndim != 1 or t.ndim != 1 or p.shape != t.shape:
            raise LengthMismatch(f"predictions {p.shape} and truth {t.shape} must be aligned vectors")
        if len(p) < 2:
            raise ValidationError("need at least two observations")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
            raise ValidationError("log predictions and truth must be finite")
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "truth", t)

    @classmethod
    def from_prices(cls, predicted_prices, sale_prices) -> "LogPredictionSet":
        return cls(np.log(np.asarray(predicted_prices, float)), np.log(np.asarray(sale_prices, float)))

    @property
    def variance(self) -> float:
        return float(np.var(self.predictions))

    @property
    def mean_bias(self) -> float:
        return float(self.predictions.mean() - self.truth.mean())

    @property
    def mse(self) -> float:
        return float(np.mean((self.predictions - self.truth) ** 2))

    def direct_covariance(self) -> float:
        p = self.predictions - self.predictions.mean()
        t = self.truth - self.truth.mean()
        return float(np.mean(p * t))


def covariance_via_mse(pset: LogPredictionSet) -> float:
    return 0.5 * (pset.variance + pset.mean_bias**2 - pset.mse + float(np.var(pset.truth)))


@dataclass(frozen=True)
class DecompositionTerms:
    d_variance: float
    d_sq_mean_bias: float
    d_mse: float
    total: float
    cov_delta: float

    @property
    def fairness_improves(self) -> bool:
        return self.total > 0


def decompose_fairness_delta(model1: LogPredictionSet, model2: LogPredictionSet) -> DecompositionTerms:
    """Split cov(p2, s) - cov(p1, s) into its variance, bias and accuracy parts.

    ``d_mse`` is the accuracy gain (positive when model 2 has lower MSE).
    ``d_sq_mean_bias`` is model 2's squared mean bias minus model 1's, the
    sign that makes ``total`` equal ``cov_delta`` exactly. It vanishes when
    both models share the same mean prediction.
    """
    if model1.truth.shape != model2.truth.shape or not np.array_equal(model1.truth, model2.truth):
        raise TruthMismatch("both prediction sets must share the same truth vector")
    d_var = model2.variance - model1.variance
    d_bias = model2.mean_bias**2 - model1.mean_bias**2
    d_mse = -(model2.mse - model1.mse)
    total = 0.5 * (d_var + d_bias + d_mse)
    cov_delta = model2.direct_covariance() - model1.direct_covariance()
    return DecompositionTerms(d_var, d_bias, d_mse, total, cov_delta)


def find_tradeoff_example(n: int = 50, trials: int = 10_000, seed: int = 0):
    """Randomised search for a more accurate but less fair prediction pair.

    Each trial draws a truth vector and two prediction vectors of the form
    ``a + b*s + noise`` with random level, slope and noise scale. Returns the
    first ``(model1, model2, terms)`` where model 2 has strictly lower MSE
    and ``terms.total < 0``, together with the trial index, or ``None``.
    """
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        s = rng.normal(12.0, 0.6, n)
        sets = []
        for _ in range(2):
            slope = rng.uniform(0.0, 1.2)
            level = s.mean() * (1 - slope) + rng.normal(0, 0.1)
            noise = rng.uniform(0.0, 0.6)
            sets.append(LogPredictionSet(level + slope * s + rng.normal(0, noise, n), s))
        m1, m2 = sets
        if m2.mse < m1.mse:
            terms = decompose_fairness_delta(m1, m2)
            if terms.total < 0:
                return trial, m1, m2, terms
    return None
