"""Split conformal regression with KNN difficulty estimators, Mondrian
categories, and conformal predictive systems, over arbitrary numeric
feature tables."""

from .conformal import (ConformalPredictiveSystem, ConformalRegressor,
                        MondrianPartition, MondrianSpec, NonconformityScores,
                        PredictionInterval, assign_bin, conformal_quantile,
                        fit_cps, fit_regressor, mondrian_bins)
from .dataset import (PredictionRecord, PredictionTable, SynthSpec,
                      TableSchema, load_table, split_calibration,
                      synth_heteroscedastic, write_table)
from .difficulty import (DifficultyEstimate, EstimatorSpec, FittedEstimator,
                         fit_estimator)
from .errors import DataError, InfeasibleError
from .evaluation import (EvaluationSummary, RunResult, aggregate_runs,
                         effective_coverage, mean_width, select_best)
from .neighbors import (NeighborIndex, Scaler, apply_scaler, build_index,
                        fit_scaler, knn_query, knn_query_batch)
from .pipeline import ConformalRun, run_conformal
from .sweep import SweepConfig, run_sweep

__version__ = "0.1.0"

__all__ = [
    "ConformalPredictiveSystem", "ConformalRegressor", "ConformalRun",
    "DataError", "DifficultyEstimate", "EstimatorSpec", "EvaluationSummary",
    "FittedEstimator", "InfeasibleError", "MondrianPartition", "MondrianSpec",
    "NeighborIndex", "NonconformityScores", "PredictionInterval",
    "PredictionRecord", "PredictionTable", "RunResult", "Scaler",
    "SweepConfig", "SynthSpec", "TableSchema", "aggregate_runs", "apply_scaler",
    "assign_bin", "build_index", "conformal_quantile", "effective_coverage",
    "fit_cps", "fit_estimator", "fit_regressor", "fit_scaler", "knn_query",
    "knn_query_batch", "load_table", "mean_width", "mondrian_bins",
    "run_conformal", "run_sweep", "select_best", "split_calibration",
    "synth_heteroscedastic", "write_table",
]
