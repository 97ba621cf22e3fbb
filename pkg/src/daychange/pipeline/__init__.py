"""Data ingestion, preprocessing, the online detection loop, and reporting."""

from .preprocess import (
    PreprocessConfig,
    SegmentSpec,
    dow_residualize,
    impute,
    ingest,
    inverse_normal_transform,
    preprocess_segment,
    segment,
    tune_ridge_lambda,
)
from .online import DetectionEntry, DetectionLog, online_detect
from .report import changepoint_rate, method_similarity, spearman_bootstrap

__all__ = [
    "DetectionEntry",
    "DetectionLog",
    "PreprocessConfig",
    "SegmentSpec",
    "changepoint_rate",
    "dow_residualize",
    "impute",
    "ingest",
    "inverse_normal_transform",
    "method_similarity",
    "online_detect",
    "preprocess_segment",
    "segment",
    "spearman_bootstrap",
    "tune_ridge_lambda",
]
