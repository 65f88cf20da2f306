"""Feature standardization and exact k-nearest-neighbour queries.

All difficulty estimators share one :class:`NeighborIndex`: the scaled
feature matrix of the CP training set together with its raw targets and
absolute residuals. Search is a brute-force Euclidean scan, which is exact
and fast at the table sizes this package targets (tens of thousands of
points).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import PredictionTable
from .errors import InfeasibleError

# Floor for constant columns so scaling never divides by zero.
SPREAD_FLOOR = 1e-12


@dataclass(frozen=True)
class Scaler:
    """Per-dimension standardizer: (x - means) / spreads.

    ``spreads`` is the population standard deviation of the fitted table,
    floored at SPREAD_FLOOR for constant columns.
    """

    means: np.ndarray
    spreads: np.ndarray

    @property
    def dimension(self) -> int:
        return self.means.shape[0]


def fit_scaler(table: PredictionTable) -> Scaler:
    """Fit column means and population standard deviations."""
    means = table.features.mean(axis=0)
    spreads = table.features.std(axis=0)
    spreads = np.maximum(spreads, SPREAD_FLOOR)
    return Scaler(means=means, spreads=spreads)


def apply_scaler(scaler: Scaler, features: np.ndarray) -> np.ndarray:
    """Standardize one feature vector or an (n, d) matrix of them."""
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != scaler.dimension:
        raise ValueError(f"dimension mismatch: got {features.shape[-1]}, "
                         f"scaler has {scaler.dimension}")
    return (features - scaler.means) / scaler.spreads


@dataclass(frozen=True)
class NeighborIndex:
    """Scaled points of the CP training set plus per-point targets and
    absolute residuals, searched with the Euclidean metric."""

    points: np.ndarray
    targets: np.ndarray
    residuals: np.ndarray
    scaler: Scaler

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


def build_index(table: PredictionTable, scaler: Scaler) -> NeighborIndex:
    """Index a table's rows under a fitted scaler."""
    if table.dimension != scaler.dimension:
        raise ValueError(f"dimension mismatch: table d={table.dimension}, "
                         f"scaler d={scaler.dimension}")
    return NeighborIndex(points=apply_scaler(scaler, table.features),
                         targets=table.targets.copy(),
                         residuals=table.residuals,
                         scaler=scaler)


def _check_k(index: NeighborIndex, k: int) -> None:
    if not 1 <= k <= len(index):
        raise InfeasibleError(f"k={k} out of range for index of size {len(index)}")


def knn_query(index: NeighborIndex, query_features: np.ndarray,
              k: int) -> list[tuple[int, float]]:
    """The k nearest stored points to an already-scaled query.

    Returns (point position, distance) pairs ascending by distance, ties
    broken by ascending position.
    """
    _check_k(index, k)
    q = np.asarray(query_features, dtype=float)
    if q.shape != (index.dimension,):
        raise ValueError(f"query has shape {q.shape}, expected ({index.dimension},)")
    dist = np.sqrt(((index.points - q) ** 2).sum(axis=-1))
    order = np.argsort(dist, kind="stable")[:k]
    return [(int(i), float(dist[i])) for i in order]


def knn_query_batch(index: NeighborIndex, queries: np.ndarray, k: int,
                    chunk: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`knn_query` over an (m, d) block of scaled queries.

    Returns (positions, distances), each of shape (m, k), identical row by
    row to the single-query path. ``chunk`` bounds the number of queries
    expanded at once; the default keeps the (chunk, n, d) work array around
    64 MB regardless of index size.
    """
    _check_k(index, k)
    queries = np.asarray(queries, dtype=float)
    if queries.ndim != 2 or queries.shape[1] != index.dimension:
        raise ValueError("queries must be (m, d) with the index's dimension")
    if chunk is None:
        per_query = max(1, len(index) * index.dimension)
        chunk = max(1, min(512, 8_000_000 // per_query))
    m = queries.shape[0]
    positions = np.empty((m, k), dtype=int)
    distances = np.empty((m, k), dtype=float)
    for start in range(0, m, chunk):
        block = queries[start:start + chunk]
        diff = index.points[None, :, :] - block[:, None, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        positions[start:start + len(block)] = order
        distances[start:start + len(block)] = np.take_along_axis(dist, order, axis=1)
    return positions, distances
