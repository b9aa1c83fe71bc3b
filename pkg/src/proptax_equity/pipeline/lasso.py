"""LASSO by cyclic coordinate descent with an unpenalised intercept."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import NonConvergence, ValidationError


@dataclass(frozen=True)
class LassoFit:
    intercept: float
    coef: np.ndarray
    lam: float
    sweeps: int

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef


def normalize_weights(weights, n: int) -> Optional[np.ndarray]:
    """Weights rescaled to mean one; ``None`` when absent or all equal.

    Treating constant weights as absent makes a constant-weight fit identical
    to the unweighted one, bit for bit.
    """
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValidationError(f"weights must have shape ({n},)")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValidationError("weights must be finite and positive")
    if np.all(w == w[0]):
        return None
    return w / w.mean()


def lambda_max(X, y, weights=None) -> float:
    """Smallest penalty at which every coefficient is zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = normalize_weights(weights, len(y))
    if w is None:
        return float(np.max(np.abs(X.T @ (y - y.mean()))) / len(y)) if X.shape[1] else 0.0
    ym = np.sum(w * y) / w.sum()
    return float(np.max(np.abs(X.T @ (w * (y - ym)))) / w.sum()) if X.shape[1] else 0.0


def fit_lasso(X, y, lam: float, weights=None, *, tol: float = 1e-7,
              max_sweeps: int = 100_000) -> LassoFit:
    """Minimise  sum_i w_i (y_i - b0 - x_i.b)^2 / (2 sum w) + lam * |b|_1.

    Stops when the largest change in any coefficient (intercept included)
    during a sweep falls below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValidationError("lam must be non-negative")
    n, p = X.shape
    if y.shape != (n,) or not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ValidationError("X and y must be finite and aligned")
    w = normalize_weights(weights, n)
    wsum = float(n) if w is None else float(w.sum())
    wx = X if w is None else X * w[:, None]
    col_sq = np.einsum("ij,ij->j", wx, X) / wsum

    beta = np.zeros(p)
    b0 = float(y.mean() if w is None else np.sum(w * y) / wsum)
    resid = y - b0
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0:
                continue
            old = beta[j]
            rho = wx[:, j] @ resid / wsum + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != old:
                resid -= X[:, j] * (new - old)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        shift = float(resid.mean() if w is None else np.sum(w * resid) / wsum)
        if shift != 0.0:
            b0 += shift
            resid -= shift
            max_delta = max(max_delta, abs(shift))
        if max_delta < tol:
            return LassoFit(b0, beta, lam, sweep)
    raise NonConvergence(f"no convergence after {max_sweeps} sweeps (last change {max_delta:.3g})")


def kkt_violation(fit: LassoFit, X, y, weights=None) -> float:
    """Largest violation of the LASSO optimality conditions.

    Zero coefficients need |grad_j| <= lam; active ones need grad_j = lam*sign(b_j).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = normalize_weights(weights, len(y))
    r = y - fit.predict(X)
    grad = X.T @ (r if w is None else w * r) / (len(y) if w is None else w.sum())
    active = fit.coef != 0
    viol = np.zeros_like(grad)
    viol[active] = np.abs(grad[active] - fit.lam * np.sign(fit.coef[active]))
    viol[~active] = np.maximum(np.abs(grad[~active]) - fit.lam, 0.0)
    return float(viol.max()) if viol.size else 0.0
