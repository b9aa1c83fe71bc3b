"""Accuracy and vertical-equity evaluation for property tax assessments."""

__version__ = "0.1.0"

from .domain import (
    CensusBlockGroupRow,
    CountyPanel,
    RatioObservation,
    SaleRecord,
    to_ratio_observations,
    validate_panel,
)
from .metrics import (
    classify_regressive,
    etr_comparison,
    log_coefficient,
    mae,
    mape,
    prd,
    rmse,
    suits_index,
)

__all__ = [
    "CensusBlockGroupRow",
    "CountyPanel",
    "RatioObservation",
    "SaleRecord",
    "classify_regressive",
    "etr_comparison",
    "log_coefficient",
    "mae",
    "mape",
    "prd",
    "rmse",
    "suits_index",
    "to_ratio_observations",
    "validate_panel",
]
