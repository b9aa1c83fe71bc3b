"""Counterfactual AVMs: preprocessing + tuned estimator, predicting log sale price."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..errors import ValidationError
from .preprocess import FeaturePipeline, PipelineConfig
from .tuning import TuneResult, fit_estimator, tune

MODEL_KINDS = ("lasso", "random_forest")


@dataclass
class FittedModel:
    kind: str
    params: dict
    estimator: object
    pipeline: FeaturePipeline
    target: str = "log_sale_price"
    tuning: Optional[TuneResult] = None
    seed: int = 0

    @property
    def feature_names(self) -> list[str]:
        return list(self.pipeline.columns_)

    @property
    def source_columns(self) -> list[str]:
        return sorted({self.pipeline.meta_[c].source for c in self.pipeline.columns_})

    def predict_log(self, rows: Sequence[Mapping]) -> np.ndarray:
        X = self.pipeline.transform(rows).values
        return self.estimator.predict(X)


def fit_model(kind: str, rows: Sequence[Mapping], log_price, config: PipelineConfig = PipelineConfig(),
              *, weights=None, params: Optional[dict] = None, candidates=None,
              report_only: Sequence[str] = (), seed: Optional[int] = None) -> FittedModel:
    """Fit preprocessing on ``rows``, tune (unless ``params`` is given), refit on all rows."""
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}")
    seed = config.seed if seed is None else seed
    y = np.asarray(log_price, dtype=float)
    if y.shape != (len(rows),):
        raise ValidationError("log_price must align with rows")
    pipe = FeaturePipeline(config, report_only)
    X = pipe.fit(rows).values
    leaked = set(pipe.sources_) & set(report_only)
    if leaked:
        raise AssertionError(f"report-only columns entered the model: {sorted(leaked)}")
    fit_kw = dict(n_trees=config.n_trees, lasso_tol=config.lasso_tol,
                  lasso_max_sweeps=config.lasso_max_sweeps)
    result = None
    if params is None:
        result = tune(kind, X, y, budget=config.tuner_budget, folds=config.cv_folds, seed=seed,
                      weights=weights, candidates=candidates, **fit_kw)
        params = result.best_params
    est = fit_estimator(kind, X, y, params, weights, seed=seed, **fit_kw)
    return FittedModel(kind, dict(params), est, pipe, tuning=result, seed=seed)


def predict_assessments(model: FittedModel, rows: Sequence[Mapping]) -> np.ndarray:
    """Counterfactual assessed values: exp of the predicted log sale price."""
    return np.exp(model.predict_log(rows))
