"""CART regression trees and a bagged random forest.

Tree growth is compiled with numba. A forest sorts its training rows into a
canonical order before drawing bootstrap samples, so the fit depends only
on the set of rows, not on their order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from ..errors import ValidationError
from .lasso import normalize_weights


@numba.njit(cache=True)
def _grow(X, y, w, cnt, rows, max_features, min_leaf, max_depth, seed):
    np.random.seed(seed)
    n_rows = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)

    idx = rows.copy()
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n_rows
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(p)

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]

        sw = 0.0
        swy = 0.0
        c_tot = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(lo, hi):
            r = idx[k]
            sw += w[r]
            swy += w[r] * y[r]
            c_tot += cnt[r]
            if y[r] < ymin:
                ymin = y[r]
            if y[r] > ymax:
                ymax = y[r]
        value[node] = swy / sw

        if ymax - ymin <= 1e-12 * max(1.0, abs(ymax)) or c_tot < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        # partial Fisher-Yates draw of candidate features; with every feature a
        # candidate the natural order is kept, so ties go to the lowest index
        for k in range(max_features if max_features < p else 0):
            jj = k + np.random.randint(p - k)
            tmp = feats[k]
            feats[k] = feats[jj]
            feats[jj] = tmp

        parent = swy * swy / sw
        best_gain = 1e-12 * max(1.0, abs(parent))
        # gains within rounding noise of the best count as ties: earlier candidate wins
        tie_tol = 1e-12 * max(1.0, abs(parent))
        best_f = -1
        best_t = 0.0
        m = hi - lo
        xs = np.empty(m)
        for k in range(max_features):
            f = feats[k]
            for q in range(m):
                xs[q] = X[idx[lo + q], f]
            order = np.argsort(xs, kind="mergesort")
            cw = 0.0
            cwy = 0.0
            cc = 0.0
            for q in range(m - 1):
                r = idx[lo + order[q]]
                cw += w[r]
                cwy += w[r] * y[r]
                cc += cnt[r]
                x_here = xs[order[q]]
                x_next = xs[order[q + 1]]
                if x_next <= x_here:
                    continue
                if cc < min_leaf or c_tot - cc < min_leaf:
                    continue
                rw = sw - cw
                if cw <= 0.0 or rw <= 0.0:
                    continue
                score = cwy * cwy / cw + (swy - cwy) * (swy - cwy) / rw - parent
                if score > best_gain + (tie_tol if best_f >= 0 else 0.0):
                    best_gain = score
                    best_f = f
                    best_t = 0.5 * (x_here + x_next)

        if best_f < 0:
            continue

        # partition idx[lo:hi] in place, stable within each side
        buf = np.empty(m, np.int64)
        nl = 0
        for q in range(lo, hi):
            if X[idx[q], best_f] <= best_t:
                buf[nl] = idx[q]
                nl += 1
        nr = nl
        for q in range(lo, hi):
            if X[idx[q], best_f] > best_t:
                buf[nr] = idx[q]
                nr += 1
        for q in range(m):
            idx[lo + q] = buf[q]

        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        # push right first so the left subtree is grown first
        st_node[top] = right[node]
        st_lo[top] = lo + nl
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = left[node]
        st_lo[top] = lo
        st_hi[top] = lo + nl
        st_depth[top] = depth + 1
        top += 1

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@numba.njit(cache=True)
def _predict(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _predict(X, self.feature, self.threshold, self.left, self.right, self.value)


def fit_tree(X, y, *, sample_weight=None, counts=None, max_features: Optional[int] = None,
             min_samples_leaf: int = 1, max_depth: Optional[int] = None, seed: int = 0) -> RegressionTree:
    """Grow one CART regression tree (squared-error splits, midpoint thresholds).

    ``counts`` are bootstrap multiplicities; rows with count zero are left out
    and ``min_samples_leaf`` is measured in counted rows.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = X.shape
    cnt = np.ones(n) if counts is None else np.asarray(counts, dtype=float)
    w = cnt.copy() if sample_weight is None else cnt * np.asarray(sample_weight, dtype=float)
    rows = np.flatnonzero(cnt > 0).astype(np.int64)
    if rows.size == 0:
        raise ValidationError("tree needs at least one row")
    mf = p if max_features is None else int(max_features)
    mf = max(1, min(p, mf)) if p else 0
    depth = -1 if max_depth is None else int(max_depth)
    return RegressionTree(*_grow(X, y, w, cnt, rows, mf, float(min_samples_leaf), depth, seed % (2**32)))


def default_max_features(p: int) -> int:
    return max(1, math.ceil(p / 3))


@dataclass
class RandomForest:
    trees: list
    n_features: int
    oob_prediction: Optional[np.ndarray] = None

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.shape[1] != self.n_features:
            raise ValidationError(f"expected {self.n_features} features, got {X.shape[1]}")
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def oob_mse(self, y) -> float:
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(self.oob_prediction)
        return float(np.mean((self.oob_prediction[ok] - y[ok]) ** 2))


def _canonical_order(X, y, w):
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    if w is not None:
        keys = [w] + keys
    # np.lexsort sorts by the last key first
    return np.lexsort(keys)


def fit_random_forest(X, y, *, n_trees: int = 200, max_features=None, min_samples_leaf: int = 5,
                      max_depth: Optional[int] = None, bootstrap: bool = True, sample_weight=None,
                      seed: int = 0) -> RandomForest:
    """Bagged CART ensemble; prediction is the mean over trees.

    ``max_features`` may be an int, a fraction in (0, 1], or None for
    ceil(p/3). Each tree gets its own RNG stream derived from ``seed`` and the
    tree index, so results do not depend on the order trees are grown in.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,) or n == 0:
        raise ValidationError("X and y must be aligned and non-empty")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("X and y must be finite")
    w = normalize_weights(sample_weight, n)
    if max_features is None:
        mf = default_max_features(p)
    elif isinstance(max_features, float) and max_features <= 1.0:
        mf = max(1, math.ceil(max_features * p))
    else:
        mf = int(max_features)

    order = _canonical_order(X, y, w)
    Xc, yc = np.ascontiguousarray(X[order]), y[order]
    wc = None if w is None else w[order]

    trees = []
    oob_sum = np.zeros(n)
    oob_n = np.zeros(n)
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        if bootstrap:
            counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        else:
            counts = np.ones(n)
        tree = fit_tree(Xc, yc, sample_weight=wc, counts=counts, max_features=mf,
                        min_samples_leaf=min_samples_leaf, max_depth=max_depth,
                        seed=int(rng.integers(0, 2**31 - 1)))
        trees.append(tree)
        out = counts == 0
        if out.any():
            oob_sum[out] += tree.predict(Xc[out])
            oob_n[out] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        oob_c = np.where(oob_n > 0, oob_sum / oob_n, np.nan)
    oob = np.empty(n)
    oob[order] = oob_c
    return RandomForest(trees, p, oob)
