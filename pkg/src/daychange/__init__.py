"""Online multivariate change point detection for daily feature streams."""

from .errors import DayChangeError
from .model import (
    ChangePointParams,
    FeatureMatrix,
    ScenarioSpec,
    exchangeable_sigma,
    generate_alternative,
    generate_from_params,
    generate_null,
)
from .estimators import (
    MeanCov,
    RegularizedCov,
    pooled_estimates,
    prechange_estimates,
    regularized_sigma,
    pooled_estimator_bias,
)
from .vctest import CandidateScan, ScoreParts, q_statistic, scan, score_parts
from .baselines import (
    CusumState,
    DivergenceSplit,
    cusum_max,
    cusum_step,
    divergence_adjusted,
    hotelling_max,
    sample_divergence,
)
from .detectors import DetectorSpec, make_scorer
from .inference import (
    NullCache,
    NullDistribution,
    PowerEstimate,
    build_null,
    calibrate_effect,
    p_value,
    select_phi,
    threshold,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateScan",
    "ChangePointParams",
    "CusumState",
    "DayChangeError",
    "DetectorSpec",
    "DivergenceSplit",
    "FeatureMatrix",
    "MeanCov",
    "NullCache",
    "NullDistribution",
    "PowerEstimate",
    "RegularizedCov",
    "ScenarioSpec",
    "ScoreParts",
    "build_null",
    "calibrate_effect",
    "cusum_max",
    "cusum_step",
    "divergence_adjusted",
    "exchangeable_sigma",
    "generate_alternative",
    "generate_from_params",
    "generate_null",
    "hotelling_max",
    "make_scorer",
    "p_value",
    "pooled_estimates",
    "prechange_estimates",
    "q_statistic",
    "regularized_sigma",
    "sample_divergence",
    "scan",
    "score_parts",
    "select_phi",
    "pooled_estimator_bias",
    "threshold",
]
