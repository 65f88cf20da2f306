"""Per-instance difficulty estimates used to normalize nonconformity.

Three estimator kinds, all driven by the k nearest neighbours of the query
in the CP-train index:

- ``knn_target_std``: population standard deviation of the neighbours'
  targets (CLI name ``norm_std``);
- ``knn_residual``: mean of the neighbours' absolute residuals (CLI name
  ``norm_res``);
- ``target_strangeness``: mean absolute deviation of the *predicted* target
  from the neighbours' targets (CLI name ``norm_targ_strng``): how strange
  the model's prediction looks against the local target distribution.

A sensitivity floor ``beta`` is added to every raw estimate so that
normalized scores never divide by zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .neighbors import NeighborIndex, knn_query_batch

KINDS = ("knn_target_std", "knn_residual", "target_strangeness")

# Estimator names as they appear on the CLI and in reports.
CLI_NAMES = {
    "knn_target_std": "norm_std",
    "knn_residual": "norm_res",
    "target_strangeness": "norm_targ_strng",
}
KIND_FROM_CLI = {v: k for k, v in CLI_NAMES.items()}

DEFAULT_BETA = 0.01


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    k: int
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def cli_name(self) -> str:
        return CLI_NAMES[self.kind]


@dataclass(frozen=True)
class DifficultyEstimate:
    """The per-instance sigma (raw estimate + beta), in target units."""

    sigma: float


@dataclass(frozen=True)
class FittedEstimator:
    """An estimator spec bound to a CP-train neighbour index."""

    spec: EstimatorSpec
    index: NeighborIndex

    def estimate(self, query_features: np.ndarray,
                 predicted_target: float = 0.0) -> DifficultyEstimate:
        """Difficulty of one already-scaled query.

        ``predicted_target`` enters only the target_strangeness formula;
        the other kinds ignore it.
        """
        sigmas = self.estimate_batch(np.asarray(query_features, dtype=float)[None, :],
                                     np.asarray([predicted_target], dtype=float))
        return DifficultyEstimate(sigma=float(sigmas[0]))

    def estimate_batch(self, queries: np.ndarray,
                       predicted_targets: np.ndarray | None = None) -> np.ndarray:
        """Vectorized difficulty over (m, d) scaled queries; returns sigmas."""
        queries = np.asarray(queries, dtype=float)
        if not np.all(np.isfinite(queries)):
            raise ValueError("non-finite query features")
        positions, _ = knn_query_batch(self.index, queries, self.spec.k)
        return sigmas_from_positions(self.index, positions, self.spec,
                                     predicted_targets)


def fit_estimator(spec: EstimatorSpec, index: NeighborIndex) -> FittedEstimator:
    """Bind a spec to the CP-train index it will query."""
    if spec.k > len(index):
        raise InfeasibleError(f"k={spec.k} exceeds index size {len(index)}")
    return FittedEstimator(spec=spec, index=index)


def sigmas_from_positions(index: NeighborIndex, positions: np.ndarray,
                          spec: EstimatorSpec,
                          predicted_targets: np.ndarray | None = None) -> np.ndarray:
    """Difficulty from precomputed neighbour positions.

    ``positions`` is an (m, >=k) matrix of index positions in ascending
    distance order, e.g. from ``knn_query_batch``; only the first ``spec.k``
    columns are used, so one query at the largest k of a sweep can serve
    every smaller k.
    """
    if positions.shape[1] < spec.k:
        raise ValueError(f"positions provide {positions.shape[1]} neighbours, "
                         f"need k={spec.k}")
    near = positions[:, :spec.k]
    if spec.kind == "knn_target_std":
        raw = np.std(index.targets[near], axis=1)
    elif spec.kind == "knn_residual":
        raw = np.mean(np.abs(index.residuals[near]), axis=1)
    else:  # target_strangeness
        if predicted_targets is None:
            raise ValueError("target_strangeness requires predicted targets")
        predicted_targets = np.asarray(predicted_targets, dtype=float)
        if not np.all(np.isfinite(predicted_targets)):
            raise ValueError("non-finite predicted targets")
        raw = np.mean(np.abs(predicted_targets[:, None] - index.targets[near]),
                      axis=1)
    return raw + spec.beta
