"""Counterfactual assessment models and their preprocessing."""

from .forest import RandomForest, RegressionTree, fit_random_forest, fit_tree
from .lasso import LassoFit, fit_lasso, kkt_violation, lambda_max
from .models import FittedModel, fit_model, predict_assessments
from .preprocess import (
    ColumnMeta,
    FeatureMatrix,
    FeaturePipeline,
    PipelineConfig,
    SplitPlan,
    chronological_split,
    drop_sparse_features,
    mice_impute,
    one_hot_encode,
    time_features,
    winsorize_then_standardize,
)
from .tuning import TuneResult, tune

__all__ = [
    "ColumnMeta", "FeatureMatrix", "FeaturePipeline", "FittedModel", "LassoFit", "PipelineConfig",
    "RandomForest", "RegressionTree", "SplitPlan", "TuneResult", "chronological_split",
    "drop_sparse_features", "fit_lasso", "fit_model", "fit_random_forest", "fit_tree",
    "kkt_violation", "lambda_max", "mice_impute", "one_hot_encode", "predict_assessments",
    "time_features", "tune", "winsorize_then_standardize",
]
