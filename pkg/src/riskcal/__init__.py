"""Misclassification-risk estimation for top-k classifier outputs.

Given held-out (probability vector, label) pairs from a trained
classifier, this package estimates the marginal probability that the
model's top-k output misses the true label, using five methods: the raw
softmax mass (SMX), temperature scaling (PLATT), histogram binning
(HIST-BIN), isotonic regression (ISO-REG), and an inverse conformal
prediction approach (InvCP). It also ships the evaluation protocol that
scores the methods by their signed deviation from the counting estimate
over repeated random splits.
"""

from .assessment import (
    AssessmentReport,
    ExperimentConfig,
    ExperimentSummary,
    Method,
    MethodStats,
    alpha_emp,
    alpha_hat_calibrated,
    alpha_hat_smx,
    assess,
    ece,
    run_experiment,
    sweep,
)
from .calibration import (
    CalibrationPair,
    HistogramBinningModel,
    IsotonicModel,
    TemperatureModel,
    apply_histogram_binning,
    apply_isotonic,
    apply_temperature,
    correctness_pairs,
    fit_histogram_binning,
    fit_isotonic,
    fit_temperature,
    temperature_confidence,
)
from .conformal import (
    ConformalCalibration,
    InvCPResult,
    calibrate_scores,
    cp_interval,
    empirical_coverage,
    invcp_alpha,
    invcp_estimate,
)
from .core import (
    Dataset,
    PredictionRecord,
    PredictionSet,
    ScoreFunction,
    aps_score,
    lac_score,
    set_score,
    softmax,
    top_k_set,
)
from .datagen import (
    IngestSchema,
    ParseError,
    SyntheticConfig,
    ValidationError,
    generate_synthetic,
    load_dataset,
    save_dataset,
    save_synthetic,
)

__version__ = "0.1.0"

__all__ = [
    "AssessmentReport",
    "CalibrationPair",
    "ConformalCalibration",
    "Dataset",
    "ExperimentConfig",
    "ExperimentSummary",
    "HistogramBinningModel",
    "IngestSchema",
    "InvCPResult",
    "IsotonicModel",
    "Method",
    "MethodStats",
    "ParseError",
    "PredictionRecord",
    "PredictionSet",
    "ScoreFunction",
    "SyntheticConfig",
    "TemperatureModel",
    "ValidationError",
    "alpha_emp",
    "alpha_hat_calibrated",
    "alpha_hat_smx",
    "apply_histogram_binning",
    "apply_isotonic",
    "apply_temperature",
    "aps_score",
    "assess",
    "calibrate_scores",
    "correctness_pairs",
    "cp_interval",
    "ece",
    "empirical_coverage",
    "fit_histogram_binning",
    "fit_isotonic",
    "fit_temperature",
    "generate_synthetic",
    "invcp_alpha",
    "invcp_estimate",
    "lac_score",
    "load_dataset",
    "run_experiment",
    "save_dataset",
    "save_synthetic",
    "set_score",
    "softmax",
    "sweep",
    "temperature_confidence",
    "top_k_set",
]
