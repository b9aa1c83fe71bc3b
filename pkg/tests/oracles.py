"""Independent slow reference implementations used only by the tests."""

import math


def suits_loop(assessed, price):
    pairs = sorted(zip(price, assessed), key=lambda t: t[0])
    total_s = sum(p for p, _ in pairs)
    total_a = sum(a for _, a in pairs)
    x_prev = y_prev = 0.0
    cum_s = cum_a = 0.0
    area = 0.0
    for s, a in pairs:
        cum_s += s
        cum_a += a
        x = 100.0 * cum_s / total_s
        y = 100.0 * cum_a / total_a
        area += (x - x_prev) * (y + y_prev) / 2.0
        x_prev, y_prev = x, y
    return 1.0 - area / 5000.0


def ols_slope(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxx = sum((xi - mx) ** 2 for xi in x)
    sxy = sum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    return sxy / sxx


def log_coefficient_loop(assessed, price):
    x = [math.log(s) for s in price]
    y = [math.log(a / s) for a, s in zip(assessed, price)]
    return ols_slope(x, y)


def bh_bruteforce(p, alpha):
    """Step-up rule: reject the k smallest p-values for the largest k with p_(k) <= k*alpha/m."""
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    k_best = 0
    for k in range(1, m + 1):
        if p[order[k - 1]] <= k * alpha / m:
            k_best = k
    reject = [False] * m
    for i in order[:k_best]:
        reject[i] = True
    return reject


def bh_adjusted_bruteforce(p):
    m = len(p)
    out = []
    for i in range(m):
        best = 1.0
        for j in range(m):
            if p[j] >= p[i]:
                rank = sum(1 for q in p if q <= p[j])
                best = min(best, p[j] * m / rank)
        out.append(min(1.0, best))
    return out


def cart_bruteforce(X, y, min_leaf=1):
    """Exhaustive greedy CART (squared error, midpoint thresholds) as nested dicts."""
    n = len(y)
    mean = sum(y) / n
    best = None
    sse_parent = sum((v - mean) ** 2 for v in y)
    for j in range(len(X[0])):
        xs = sorted(set(row[j] for row in X))
        for lo, hi in zip(xs, xs[1:]):
            thr = (lo + hi) / 2
            left = [i for i in range(n) if X[i][j] <= thr]
            right = [i for i in range(n) if X[i][j] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            sse = 0.0
            for part in (left, right):
                m = sum(y[i] for i in part) / len(part)
                sse += sum((y[i] - m) ** 2 for i in part)
            if best is None or sse < best[0] - 1e-9 * max(1.0, sse_parent):
                best = (sse, j, thr, left, right)
    if best is None or best[0] >= sse_parent:
        return {"value": mean}
    _, j, thr, left, right = best
    return {
        "feature": j,
        "threshold": thr,
        "left": cart_bruteforce([X[i] for i in left], [y[i] for i in left], min_leaf),
        "right": cart_bruteforce([X[i] for i in right], [y[i] for i in right], min_leaf),
    }


def cart_predict(node, x):
    while "value" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]
