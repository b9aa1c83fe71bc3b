import numpy as np
import pytest

from proptax_equity.errors import BudgetZero, NonConvergence, SchemaMismatch
from proptax_equity.pipeline import (
    PipelineConfig,
    fit_lasso,
    fit_model,
    fit_random_forest,
    fit_tree,
    kkt_violation,
    lambda_max,
    predict_assessments,
    tune,
)
from proptax_equity.pipeline.tuning import FixedProposer, SobolGPProposer, cv_mae, kfold_indices

from oracles import cart_bruteforce, cart_predict


def linear_data(n=300, p=5, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.array([0.5, -0.3, 0.2, 0.0, 0.1][:p])
    return X, 12 + X @ beta + rng.normal(0, noise, n)


# -- LASSO -------------------------------------------------------------------

def test_lasso_zero_penalty_orthonormal_is_ols():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.normal(size=(40, 4)))
    X = Q - Q.mean(axis=0)  # centred columns keep the intercept separable
    X /= np.sqrt((X**2).mean(axis=0))
    y = 3 + X @ np.array([1.0, -2.0, 0.5, 0.0]) + rng.normal(0, 0.1, 40)
    fit = fit_lasso(X, y, 0.0)
    A = np.column_stack([np.ones(40), X])
    ols, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert fit.intercept == pytest.approx(ols[0], abs=1e-6)
    assert fit.coef == pytest.approx(ols[1:], abs=1e-6)


def test_lasso_lambda_max_all_zero():
    X, y = linear_data()
    lm = lambda_max(X, y)
    fit = fit_lasso(X, y, lm)
    assert np.all(fit.coef == 0) and fit.intercept == pytest.approx(y.mean())
    assert np.any(fit_lasso(X, y, 0.99 * lm).coef != 0)


def test_lasso_constant_y():
    X, _ = linear_data()
    fit = fit_lasso(X, np.full(len(X), 4.2), 0.01)
    assert np.all(fit.coef == 0) and fit.intercept == pytest.approx(4.2)


@pytest.mark.parametrize("lam", [1e-4, 1e-3, 0.01, 0.05])
def test_lasso_kkt(lam):
    X, y = linear_data(seed=2)
    X = (X - X.mean(0)) / X.std(0)
    fit = fit_lasso(X, y, lam, tol=1e-10)
    assert kkt_violation(fit, X, y) < 1e-6


def test_lasso_weighted_kkt_and_constant_weights():
    X, y = linear_data(seed=3)
    w = np.random.default_rng(3).uniform(0.5, 3, len(y))
    fit = fit_lasso(X, y, 0.01, w, tol=1e-10)
    assert kkt_violation(fit, X, y, w) < 1e-6
    a = fit_lasso(X, y, 0.01)
    b = fit_lasso(X, y, 0.01, np.full(len(y), 7.0))
    assert a.intercept == b.intercept and np.array_equal(a.coef, b.coef)


def test_lasso_nonconvergence():
    X, y = linear_data()
    with pytest.raises(NonConvergence):
        fit_lasso(X, y, 1e-6, tol=1e-30, max_sweeps=2)


# -- trees / forest ----------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_tree_matches_bruteforce_cart(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((10, 3))
    y = rng.normal(size=10)
    tree = fit_tree(X, y, min_samples_leaf=1)
    assert np.allclose(tree.predict(X), y)  # unique rows: zero training error
    oracle = cart_bruteforce(X.tolist(), y.tolist())
    grid = rng.random((200, 3))
    assert np.allclose(tree.predict(grid), [cart_predict(oracle, g) for g in grid], atol=1e-12)


def test_tree_min_leaf_matches_bruteforce():
    rng = np.random.default_rng(1)
    X = rng.random((30, 2))
    y = X[:, 0] * 3 + rng.normal(0, 0.1, 30)
    tree = fit_tree(X, y, min_samples_leaf=4)
    oracle = cart_bruteforce(X.tolist(), y.tolist(), min_leaf=4)
    grid = rng.random((100, 2))
    assert np.allclose(tree.predict(grid), [cart_predict(oracle, g) for g in grid], atol=1e-12)


def test_forest_constant_y():
    X, _ = linear_data(100)
    rf = fit_random_forest(X, np.full(100, 11.5), n_trees=20, seed=1)
    assert np.all(rf.predict(X) == 11.5)


def test_forest_row_permutation_invariant():
    X, y = linear_data(150)
    perm = np.random.default_rng(5).permutation(150)
    a = fit_random_forest(X, y, n_trees=30, seed=4)
    b = fit_random_forest(X[perm], y[perm], n_trees=30, seed=4)
    grid = np.random.default_rng(6).normal(size=(50, X.shape[1]))
    assert np.array_equal(a.predict(grid), b.predict(grid))
    assert np.array_equal(a.oob_prediction[perm], b.oob_prediction)


def test_forest_constant_weights_bit_identical():
    X, y = linear_data(120)
    a = fit_random_forest(X, y, n_trees=20, seed=2)
    b = fit_random_forest(X, y, n_trees=20, seed=2, sample_weight=np.full(120, 3.0))
    assert np.array_equal(a.predict(X), b.predict(X))


def test_forest_oob_beats_permuted_labels():
    X, y = linear_data(400, noise=0.05)
    rf = fit_random_forest(X, y, n_trees=60, seed=0)
    perm = fit_random_forest(X, np.random.default_rng(1).permutation(y), n_trees=60, seed=0)
    assert rf.oob_mse(y) < perm.oob_mse(np.random.default_rng(1).permutation(y))


def test_forest_monotone_single_feature():
    x = np.linspace(0, 10, 300)[:, None]
    y = 2 * x[:, 0] + 1
    rf = fit_random_forest(x, y, n_trees=50, max_features=1, seed=0, min_samples_leaf=5)
    grid = np.linspace(0, 10, 101)[:, None]
    assert np.all(np.diff(rf.predict(grid)) >= 0)


# -- tuning ------------------------------------------------------------------

def test_tune_budget_one_and_zero():
    X, y = linear_data(100)
    res = tune("lasso", X, y, budget=1, seed=0)
    assert len(res.history) == 1 and res.best_params == res.history[0][0]
    with pytest.raises(BudgetZero):
        tune("lasso", X, y, budget=0)


def test_tune_picks_small_lambda():
    X, y = linear_data(200)
    res = tune("lasso", X, y, budget=2, candidates=[{"lam": 0.001}, {"lam": 10.0}])
    assert res.best_params == {"lam": 0.001}
    folds = kfold_indices(200, 5, 0)
    assert res.best_score == pytest.approx(cv_mae("lasso", X, y, {"lam": 0.001}, folds))


def test_tune_tie_goes_to_earlier():
    X, y = linear_data(100)
    # both penalties exceed lambda_max: identical intercept-only fits
    res = tune("lasso", X, y, budget=2, candidates=[{"lam": 50.0}, {"lam": 100.0}])
    assert res.history[0][1] == res.history[1][1]
    assert res.best_params == {"lam": 50.0}


def test_sobol_gp_proposer_deterministic():
    X, y = linear_data(100)
    a = tune("lasso", X, y, budget=6, seed=3)
    b = tune("lasso", X, y, budget=6, seed=3)
    assert [h[0] for h in a.history] == [h[0] for h in b.history]
    p = SobolGPProposer(2, 8, seed=0)
    assert p.n_init == 4


def test_tune_forest_runs():
    X, y = linear_data(120)
    res = tune("random_forest", X, y, budget=3, seed=0, n_trees=10)
    assert set(res.best_params) == {"min_samples_leaf", "max_features"}


# -- fitted models -----------------------------------------------------------

def test_intercept_only_prediction():
    rows = [{"x": float(i % 5)} for i in range(50)]
    m = fit_model("lasso", rows, np.full(50, np.log(100.0)), params={"lam": 0.1})
    assert predict_assessments(m, rows[:3]) == pytest.approx([100.0] * 3, rel=1e-12)


def test_fit_model_schema_and_report_only():
    rng = np.random.default_rng(0)
    rows = [{"a": float(rng.normal()), "b": float(rng.normal()), "share_black": float(rng.random())}
            for _ in range(80)]
    y = np.array([12 + 0.5 * r["a"] for r in rows])
    cfg = PipelineConfig(tuner_budget=3)
    m = fit_model("lasso", rows, y, cfg, report_only=["share_black"])
    assert "share_black" not in m.source_columns
    assert m.tuning is not None and len(m.tuning.history) == 3
    with pytest.raises(SchemaMismatch):
        m.predict_log([{"b": 1.0}])
