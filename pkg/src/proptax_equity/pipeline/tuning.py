"""Budgeted hyperparameter search scored by k-fold CV mean absolute error on log price.

The default proposer draws scrambled Sobol points for the first half of the
budget and then refines with a small Gaussian-process surrogate (lower
confidence bound over random candidates). Any object with a
``propose(history) -> unit point`` method can replace it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from ..errors import BudgetZero, ValidationError
from .forest import fit_random_forest
from .lasso import fit_lasso, normalize_weights


@dataclass(frozen=True)
class Param:
    name: str
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def decode(self, u: float):
        if self.log:
            v = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        else:
            v = self.low + u * (self.high - self.low)
        return int(round(v)) if self.integer else float(v)


SEARCH_SPACES = {
    "lasso": (Param("lam", 1e-4, 1.0, log=True),),
    "random_forest": (
        Param("min_samples_leaf", 1, 30, log=True, integer=True),
        Param("max_features", 0.2, 1.0),
    ),
}


def decode(space: Sequence[Param], u) -> dict:
    return {p.name: p.decode(float(x)) for p, x in zip(space, u)}


class SobolGPProposer:
    def __init__(self, dim: int, budget: int, seed: int = 0, n_init: Optional[int] = None,
                 n_candidates: int = 512):
        self.dim = dim
        self.n_init = max(1, budget // 2) if n_init is None else n_init
        self.seed = seed
        self.n_candidates = n_candidates
        sobol = qmc.Sobol(dim, scramble=True, seed=seed)
        self._init = sobol.random(max(2, 1 << max(0, (self.n_init - 1).bit_length())))[: self.n_init]
        self._rng = np.random.default_rng([seed, 7])

    def propose(self, history: list[tuple[np.ndarray, float]]) -> np.ndarray:
        k = len(history)
        if k < self.n_init:
            return self._init[k]
        U = np.array([h[0] for h in history])
        f = np.array([h[1] for h in history])
        mu_f, sd_f = f.mean(), f.std() or 1.0
        z = (f - mu_f) / sd_f
        ls = 0.25
        K = np.exp(-0.5 * _sqdist(U, U) / ls**2) + 1e-6 * np.eye(k)
        L = np.linalg.cholesky(K)
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, z))
        best = U[np.argmin(f)]
        local = np.clip(best + self._rng.normal(0, 0.1, (self.n_candidates // 2, self.dim)), 0, 1)
        glob = self._rng.random((self.n_candidates - local.shape[0], self.dim))
        C = np.vstack([local, glob])
        Ks = np.exp(-0.5 * _sqdist(C, U) / ls**2)
        mean = Ks @ alpha
        v = np.linalg.solve(L, Ks.T)
        var = np.clip(1.0 - np.sum(v * v, axis=0), 1e-12, None)
        return C[np.argmin(mean - 2.0 * np.sqrt(var))]


def _sqdist(A, B):
    return np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)


class FixedProposer:
    """Propose a fixed list of parameter dicts in order (for grids and tests)."""

    def __init__(self, candidates: Sequence[dict]):
        self.candidates = list(candidates)

    def propose(self, history):
        return self.candidates[len(history)]


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, 11]).permutation(n)
    return np.array_split(perm, k)


def fit_estimator(kind: str, X, y, params: dict, weights=None, *, n_trees: int = 200,
                  seed: int = 0, lasso_tol: float = 1e-7, lasso_max_sweeps: int = 100_000):
    if kind == "lasso":
        return fit_lasso(X, y, params["lam"], weights, tol=lasso_tol, max_sweeps=lasso_max_sweeps)
    if kind == "random_forest":
        return fit_random_forest(
            X, y, n_trees=params.get("n_trees", n_trees), max_features=params.get("max_features"),
            min_samples_leaf=params.get("min_samples_leaf", 5), max_depth=params.get("max_depth"),
            sample_weight=weights, seed=seed)
    raise ValidationError(f"unknown model kind {kind!r}")


def cv_mae(kind: str, X, y, params: dict, folds: Sequence[np.ndarray], weights=None, **fit_kw) -> float:
    """Mean over folds of the (weighted) MAE on held-out log price."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = normalize_weights(weights, len(y))
    scores = []
    for i, hold in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        est = fit_estimator(kind, X[train], y[train], params, None if w is None else w[train], **fit_kw)
        err = np.abs(est.predict(X[hold]) - y[hold])
        scores.append(err.mean() if w is None else np.sum(w[hold] * err) / w[hold].sum())
    return float(np.mean(scores))


@dataclass
class TuneResult:
    best_params: dict
    best_score: float
    history: list = field(default_factory=list)


def tune(kind: str, X, y, *, budget: int = 12, folds: int = 5, seed: int = 0, weights=None,
         proposer=None, candidates: Optional[Sequence[dict]] = None, **fit_kw) -> TuneResult:
    """Pick hyperparameters minimising CV MAE of log price within ``budget`` evaluations.

    Ties go to the earlier-proposed candidate. ``candidates`` evaluates an
    explicit list (its length caps the budget).
    """
    if budget <= 0:
        raise BudgetZero("tuner budget must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < folds:
        raise ValidationError(f"need at least {folds} rows for {folds}-fold CV")
    fold_idx = kfold_indices(len(y), folds, seed)
    space = SEARCH_SPACES[kind]
    if candidates is not None:
        proposer = FixedProposer(candidates)
        budget = min(budget, len(candidates))
    elif proposer is None:
        proposer = SobolGPProposer(len(space), budget, seed)

    history, unit_history = [], []
    for _ in range(budget):
        proposal = proposer.propose(unit_history)
        if isinstance(proposal, dict):
            params, u = dict(proposal), None
        else:
            u = np.asarray(proposal, dtype=float)
            params = decode(space, u)
        score = cv_mae(kind, X, y, params, fold_idx, weights, seed=seed, **fit_kw)
        history.append((params, score))
        unit_history.append((u, score))
    scores = [s for _, s in history]
    best = int(np.argmin(scores))
    return TuneResult(history[best][0], scores[best], history)
