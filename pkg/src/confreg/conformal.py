"""Split conformal regressors and conformal predictive systems.

The regressor turns a point prediction into an interval ``ŷ ± q·σ`` where
``q`` is a finite-sample-valid quantile of the calibration nonconformity
scores ``|y − ŷ|/σ`` (``σ ≡ 1`` when unnormalized). Scores may be kept
globally or partitioned into equal-frequency Mondrian bins for
category-conditional validity.

The predictive system keeps the *signed* calibration scores and yields a
full predictive CDF per instance, from which two-tailed intervals are
extracted.

Quantile convention: with ``n`` calibration scores sorted ascending and
confidence ``c``, the interval radius is the ``⌈(n+1)·c⌉``-th smallest
score; when that index exceeds ``n`` the interval is unbounded rather than
clamped, so the coverage guarantee is never silently weakened.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import PredictionTable
from .difficulty import DifficultyEstimate, FittedEstimator
from .errors import InfeasibleError
from .neighbors import apply_scaler

MONDRIAN_ATTRIBUTES = ("difficulty", "prediction")
DEFAULT_MIN_BIN_SIZE = 20


@dataclass(frozen=True)
class NonconformityScores:
    """Ascending-sorted nonconformity scores of one calibration set."""

    scores: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", np.sort(np.asarray(self.scores, dtype=float)))
        if len(self.scores) == 0:
            raise ValueError("empty scores")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("non-finite score")

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    confidence: float

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, y: float) -> bool:
        return self.lower <= y <= self.upper


def _check_confidence(confidence: float) -> None:
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")


def conformal_quantile(scores: NonconformityScores | np.ndarray,
                       confidence: float,
                       clamp_overflow: bool = False) -> tuple[float, bool]:
    """The split-CP calibration quantile.

    Returns ``(q, bounded)`` with ``q`` the ``⌈(n+1)·confidence⌉``-th
    smallest score, or ``(+inf, False)`` when that index exceeds ``n``.
    ``clamp_overflow=True`` substitutes the largest score for the infinite
    quantile (still flagged unbounded); that mode is for width reporting
    only and has no coverage guarantee.
    """
    _check_confidence(confidence)
    arr = scores.scores if isinstance(scores, NonconformityScores) \
        else np.sort(np.asarray(scores, dtype=float))
    n = len(arr)
    if n == 0:
        raise ValueError("empty scores")
    s = math.ceil((n + 1) * confidence)
    if s <= n:
        return float(arr[s - 1]), True
    if clamp_overflow:
        return float(arr[-1]), False
    return math.inf, False


@dataclass(frozen=True)
class MondrianPartition:
    """Equal-frequency partition of the real line for one binning attribute.

    ``boundaries`` are strictly ascending cut points; bin ``j`` is the
    half-open interval ``(boundaries[j-1], boundaries[j]]`` with the two
    outer bins extending to ∓∞. ``per_bin_scores`` aligns with the bins.
    """

    boundaries: np.ndarray
    attribute: str
    per_bin_scores: tuple[NonconformityScores, ...] = ()

    @property
    def n_bins(self) -> int:
        return len(self.boundaries) + 1


def _interp_quantile(sorted_values: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile of an ascending array."""
    n = len(sorted_values)
    h = (n - 1) * q
    f = math.floor(h)
    if f >= n - 1:
        return float(sorted_values[n - 1])
    g = h - f
    return float(sorted_values[f] + g * (sorted_values[f + 1] - sorted_values[f]))


def mondrian_bins(values: np.ndarray, n_bins: int,
                  min_bin_size: int = DEFAULT_MIN_BIN_SIZE) -> MondrianPartition:
    """Equal-frequency boundaries at the j/n_bins quantiles of ``values``.

    Boundaries that coincide, or that would leave a bin with no member,
    are merged away (with a warning, since the bin count drops). Raises
    InfeasibleError when any resulting bin holds fewer than
    ``min_bin_size`` of the input values.
    """
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise ValueError("empty values")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    ordered = np.sort(values)
    n = len(ordered)
    candidates = [_interp_quantile(ordered, j / n_bins) for j in range(1, n_bins)]
    boundaries: list[float] = []
    seen_positions: set[int] = set()
    for b in candidates:
        # Right-closed split position: how many values land at or below b.
        pos = int(np.searchsorted(ordered, b, side="right"))
        if pos in seen_positions or pos == 0 or pos == n:
            continue
        seen_positions.add(pos)
        boundaries.append(b)
    if len(boundaries) < len(candidates):
        warnings.warn(f"merged duplicate Mondrian boundaries: requested "
                      f"{n_bins} bins, kept {len(boundaries) + 1}")
    partition = MondrianPartition(boundaries=np.asarray(boundaries, dtype=float),
                                  attribute="difficulty")
    counts = np.bincount([assign_bin(partition, v) for v in values],
                         minlength=partition.n_bins)
    if np.any(counts < min_bin_size):
        short = int(np.argmin(counts))
        raise InfeasibleError(
            f"Mondrian bin {short} has {counts[short]} members, below the "
            f"minimum of {min_bin_size}; insufficient data for {n_bins} bins")
    return partition


def assign_bin(partition: MondrianPartition, value: float) -> int:
    """Map a real to its bin: intervals are right-closed, so a value equal
    to a boundary falls in the lower bin."""
    return int(np.searchsorted(partition.boundaries, value, side="left"))


@dataclass(frozen=True)
class MondrianSpec:
    """How to partition calibration rows: attribute to bin on, requested
    bin count, and the per-bin size floor."""

    attribute: str = "difficulty"
    n_bins: int = 10
    min_bin_size: int = DEFAULT_MIN_BIN_SIZE

    def __post_init__(self) -> None:
        if self.attribute not in MONDRIAN_ATTRIBUTES:
            raise ValueError(f"unknown Mondrian attribute {self.attribute!r}")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")


def _calibration_sigmas(cal: PredictionTable, estimator: FittedEstimator,
                        precomputed: np.ndarray | None) -> np.ndarray:
    """Difficulty of each calibration row; ``precomputed`` short-circuits
    the neighbour queries when the caller already holds the estimator's
    values for exactly these rows (a sweep reuses one query across cells)."""
    if precomputed is not None:
        precomputed = np.asarray(precomputed, dtype=float)
        if len(precomputed) != len(cal):
            raise ValueError("precomputed sigmas do not match the table length")
        return precomputed
    if estimator.index.dimension != cal.dimension:
        raise ValueError("estimator index dimension does not match table")
    scaled = apply_scaler(estimator.index.scaler, cal.features)
    return estimator.estimate_batch(scaled, cal.predictions)


def _sigma_value(sigma: DifficultyEstimate | float | None) -> float | None:
    if sigma is None:
        return None
    if isinstance(sigma, DifficultyEstimate):
        return sigma.sigma
    return float(sigma)


@dataclass(frozen=True)
class ConformalRegressor:
    """Calibrated score state: either a global score set or a Mondrian
    partition, plus the difficulty estimator when normalized."""

    global_scores: NonconformityScores | None
    partition: MondrianPartition | None
    normalization: FittedEstimator | None

    @property
    def normalized(self) -> bool:
        return self.normalization is not None

    @property
    def mondrian(self) -> bool:
        return self.partition is not None

    def predict_interval(self, prediction: float,
                         sigma: DifficultyEstimate | float | None = None,
                         bin_value: float | None = None,
                         confidence: float = 0.95,
                         clamp_overflow: bool = False) -> PredictionInterval:
        """Interval ``ŷ ± q·σ`` from the applicable score set.

        ``clamp_overflow`` caps an overflowing quantile at the largest
        calibration score instead of returning an infinite interval; use it
        for reporting only, never when checking validity.
        """
        sig = _sigma_value(sigma)
        if self.normalized and sig is None:
            raise ValueError("normalized regressor requires sigma")
        if not self.normalized and sig is not None:
            raise ValueError("sigma given but regressor is not normalized")
        if self.mondrian and bin_value is None:
            raise ValueError("Mondrian regressor requires bin_value")
        if not self.mondrian and bin_value is not None:
            raise ValueError("bin_value given but regressor is not Mondrian")
        if self.mondrian:
            scores = self.partition.per_bin_scores[assign_bin(self.partition, bin_value)]
        else:
            scores = self.global_scores
        q, bounded = conformal_quantile(scores, confidence, clamp_overflow)
        if not bounded and not clamp_overflow:
            return PredictionInterval(-math.inf, math.inf, confidence)
        half = q * sig if self.normalized else q
        return PredictionInterval(prediction - half, prediction + half, confidence)

    def predict_intervals(self, predictions: np.ndarray,
                          sigmas: np.ndarray | None = None,
                          bin_values: np.ndarray | None = None,
                          confidence: float = 0.95) -> list[PredictionInterval]:
        """Vectorized counterpart of :meth:`predict_interval`."""
        predictions = np.asarray(predictions, dtype=float)
        out = []
        for i in range(len(predictions)):
            out.append(self.predict_interval(
                float(predictions[i]),
                sigma=None if sigmas is None else float(sigmas[i]),
                bin_value=None if bin_values is None else float(bin_values[i]),
                confidence=confidence))
        return out


def fit_regressor(cal: PredictionTable,
                  estimator: FittedEstimator | None = None,
                  mondrian: MondrianSpec | None = None,
                  cal_sigmas: np.ndarray | None = None) -> ConformalRegressor:
    """Calibrate a conformal regressor on a calibration table.

    With ``estimator``, scores are ``|y − ŷ|/σ`` using the estimator's
    difficulty at each calibration row; with ``mondrian``, rows are
    partitioned on the chosen attribute and per-bin score sets stored.
    ``cal_sigmas`` may carry difficulty values the caller already computed
    with ``estimator`` for these rows.
    """
    if cal_sigmas is not None and estimator is None:
        raise ValueError("cal_sigmas given without an estimator")
    residuals = cal.residuals
    sigmas = None
    if estimator is not None:
        sigmas = _calibration_sigmas(cal, estimator, cal_sigmas)
        scores = residuals / sigmas
    else:
        scores = residuals
    if mondrian is None:
        return ConformalRegressor(
            global_scores=NonconformityScores(scores, normalized=estimator is not None),
            partition=None, normalization=estimator)
    if mondrian.attribute == "difficulty":
        if estimator is None:
            raise ValueError("Mondrian binning on difficulty requires an estimator")
        bin_values = sigmas
    else:
        bin_values = cal.predictions
    bare = mondrian_bins(bin_values, mondrian.n_bins, mondrian.min_bin_size)
    assignments = np.asarray([assign_bin(bare, v) for v in bin_values])
    per_bin = tuple(
        NonconformityScores(scores[assignments == b], normalized=estimator is not None)
        for b in range(bare.n_bins))
    partition = MondrianPartition(boundaries=bare.boundaries,
                                  attribute=mondrian.attribute,
                                  per_bin_scores=per_bin)
    return ConformalRegressor(global_scores=None, partition=partition,
                              normalization=estimator)


@dataclass(frozen=True)
class ConformalPredictiveSystem:
    """Sorted signed calibration scores ``C_i = (y_i − ŷ_i)/σ_i`` plus the
    tie-smoothing weight used when a query value collides with a knot."""

    signed_scores: np.ndarray
    normalization: FittedEstimator | None
    tie_tau: float = 0.5

    @property
    def normalized(self) -> bool:
        return self.normalization is not None

    def _check_sigma(self, sigma: float | None) -> float:
        if self.normalized and sigma is None:
            raise ValueError("normalized CPS requires sigma")
        if not self.normalized and sigma is not None:
            raise ValueError("sigma given but CPS is not normalized")
        return 1.0 if sigma is None else sigma

    def cdf(self, prediction: float, y: float,
            sigma: DifficultyEstimate | float | None = None,
            tau: float | None = None) -> float:
        """Predictive cumulative probability at ``y``.

        The CDF steps through the knots ``t_i = ŷ + σ·C_i``; a query equal
        to one or more knots is smoothed by ``tau`` (the system's
        ``tie_tau`` unless overridden per query).
        """
        if not math.isfinite(y):
            raise ValueError("y must be finite")
        sig = self._check_sigma(_sigma_value(sigma))
        t = tau if tau is not None else self.tie_tau
        if not 0.0 <= t <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        knots = prediction + sig * self.signed_scores
        n = len(knots)
        less = int(np.count_nonzero(knots < y))
        equal = int(np.count_nonzero(knots == y))
        return (less + t * (equal + 1)) / (n + 1)

    def interval(self, prediction: float,
                 sigma: DifficultyEstimate | float | None = None,
                 confidence: float = 0.95) -> PredictionInterval:
        """Two-tailed interval between the ε/2 and 1−ε/2 knots."""
        _check_confidence(confidence)
        sig = self._check_sigma(_sigma_value(sigma))
        n = len(self.signed_scores)
        eps = 1.0 - confidence
        lo_idx = math.floor((n + 1) * eps / 2)
        hi_idx = math.ceil((n + 1) * (1 - eps / 2))
        lower = (prediction + sig * float(self.signed_scores[lo_idx - 1])
                 if lo_idx >= 1 else -math.inf)
        upper = (prediction + sig * float(self.signed_scores[hi_idx - 1])
                 if hi_idx <= n else math.inf)
        return PredictionInterval(lower, upper, confidence)

    def intervals(self, predictions: np.ndarray,
                  sigmas: np.ndarray | None = None,
                  confidence: float = 0.95) -> list[PredictionInterval]:
        predictions = np.asarray(predictions, dtype=float)
        return [self.interval(float(predictions[i]),
                              sigma=None if sigmas is None else float(sigmas[i]),
                              confidence=confidence)
                for i in range(len(predictions))]


def fit_cps(cal: PredictionTable,
            estimator: FittedEstimator | None = None,
            tie_tau: float = 0.5,
            cal_sigmas: np.ndarray | None = None) -> ConformalPredictiveSystem:
    """Calibrate a conformal predictive system on a calibration table.

    ``cal_sigmas`` works as in :func:`fit_regressor`.
    """
    if not 0.0 <= tie_tau <= 1.0:
        raise ValueError("tie_tau must be in [0, 1]")
    if cal_sigmas is not None and estimator is None:
        raise ValueError("cal_sigmas given without an estimator")
    signed = cal.targets - cal.predictions
    if estimator is not None:
        signed = signed / _calibration_sigmas(cal, estimator, cal_sigmas)
    return ConformalPredictiveSystem(signed_scores=np.sort(signed),
                                     normalization=estimator,
                                     tie_tau=tie_tau)
