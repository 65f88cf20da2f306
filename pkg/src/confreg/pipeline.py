"""End-to-end conformal runs over (train, calibration, test) tables.

One call wires the whole chain: fit the scaler and neighbour index on the
CP training table, bind the difficulty estimator, calibrate a conformal
regressor or predictive system (optionally Mondrian-partitioned), and
produce test intervals plus coverage/width metrics. Both the CLI and the
sweep drive this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import (ConformalPredictiveSystem, MondrianPartition,
                        MondrianSpec, PredictionInterval, assign_bin, fit_cps,
                        fit_regressor, mondrian_bins)
from .dataset import PredictionTable
from .difficulty import EstimatorSpec, FittedEstimator, fit_estimator
from .evaluation import effective_coverage, mean_width
from .neighbors import apply_scaler, build_index, fit_scaler

METHODS = ("cr", "cps")


@dataclass(frozen=True)
class BinnedCps:
    """One conformal predictive system per Mondrian bin."""

    partition: MondrianPartition
    per_bin: tuple[ConformalPredictiveSystem, ...]

    def interval(self, prediction: float, sigma: float | None,
                 bin_value: float, confidence: float) -> PredictionInterval:
        cps = self.per_bin[assign_bin(self.partition, bin_value)]
        return cps.interval(prediction, sigma=sigma, confidence=confidence)


def fit_binned_cps(cal: PredictionTable, estimator: FittedEstimator | None,
                   mondrian: MondrianSpec, tie_tau: float = 0.5,
                   cal_sigmas: np.ndarray | None = None) -> BinnedCps:
    """Partition the calibration rows and fit one CPS per bin.

    ``cal_sigmas`` may carry difficulty values already computed by
    ``estimator`` for these rows (they are recomputed otherwise).
    """
    if estimator is not None and cal_sigmas is None:
        scaled = apply_scaler(estimator.index.scaler, cal.features)
        cal_sigmas = estimator.estimate_batch(scaled, cal.predictions)
    if mondrian.attribute == "difficulty":
        if estimator is None:
            raise ValueError("Mondrian binning on difficulty requires an estimator")
        bin_values = cal_sigmas
    else:
        bin_values = cal.predictions
    partition = mondrian_bins(bin_values, mondrian.n_bins, mondrian.min_bin_size)
    assignments = np.asarray([assign_bin(partition, v) for v in bin_values])
    systems = []
    for b in range(partition.n_bins):
        members = np.flatnonzero(assignments == b)
        subset = cal.take(members)
        systems.append(fit_cps(subset, estimator, tie_tau,
                               cal_sigmas=None if cal_sigmas is None
                               else cal_sigmas[members]))
    return BinnedCps(partition=partition, per_bin=tuple(systems))


@dataclass(frozen=True)
class ConformalRun:
    """Test-set outcome of one pipeline invocation."""

    intervals: list[PredictionInterval]
    coverage: float
    mean_width: float
    confidence: float
    test_sigmas: np.ndarray | None

    @property
    def unbounded_count(self) -> int:
        return sum(1 for iv in self.intervals if not iv.bounded)


def run_conformal(train: PredictionTable, cal: PredictionTable,
                  test: PredictionTable,
                  estimator_spec: EstimatorSpec | None = None,
                  mondrian: MondrianSpec | None = None,
                  method: str = "cps",
                  confidence: float = 0.9,
                  tie_tau: float = 0.5) -> ConformalRun:
    """Fit on ``train``/``cal`` and produce intervals for every test row."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    for other in (cal, test):
        if other.dimension != train.dimension:
            raise ValueError("tables disagree on feature dimension")
    scaler = fit_scaler(train)
    index = build_index(train, scaler)
    estimator = None
    test_sigmas = None
    if estimator_spec is not None:
        estimator = fit_estimator(estimator_spec, index)
        test_scaled = apply_scaler(scaler, test.features)
        test_sigmas = estimator.estimate_batch(test_scaled, test.predictions)

    if mondrian is not None:
        if mondrian.attribute == "difficulty":
            if estimator is None:
                raise ValueError("Mondrian binning on difficulty requires an estimator")
            test_bin_values = test_sigmas
        else:
            test_bin_values = test.predictions

    if method == "cr":
        cr = fit_regressor(cal, estimator, mondrian)
        intervals = cr.predict_intervals(
            test.predictions,
            sigmas=test_sigmas if estimator is not None else None,
            bin_values=test_bin_values if mondrian is not None else None,
            confidence=confidence)
    elif mondrian is None:
        cps = fit_cps(cal, estimator, tie_tau)
        intervals = cps.intervals(test.predictions, test_sigmas, confidence)
    else:
        binned = fit_binned_cps(cal, estimator, mondrian, tie_tau)
        intervals = [
            binned.interval(float(test.predictions[i]),
                            sigma=None if test_sigmas is None else float(test_sigmas[i]),
                            bin_value=float(test_bin_values[i]),
                            confidence=confidence)
            for i in range(len(test))]

    return ConformalRun(intervals=intervals,
                        coverage=effective_coverage(intervals, test.targets),
                        mean_width=mean_width(intervals),
                        confidence=confidence,
                        test_sigmas=test_sigmas)
