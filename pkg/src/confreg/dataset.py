"""Tables of (features, prediction, target) rows and how to obtain them.

A :class:`PredictionTable` is the universal input of the package: every row
pairs a feature vector with a model's point prediction and the observed
target. Tables come from CSV files (:func:`load_table`), from seeded
calibration splits (:func:`split_calibration`), or from the synthetic
heteroscedastic generator (:func:`synth_heteroscedastic`) used by the
statistical test suite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DataError, InfeasibleError

NAN_TOKENS = {"", "nan"}


@dataclass(frozen=True)
class PredictionRecord:
    """One row: an opaque id, a feature vector, the model's prediction ŷ
    and the observed target y (same units as the prediction)."""

    id: str
    features: np.ndarray
    prediction: float
    target: float

    @property
    def residual(self) -> float:
        return abs(self.target - self.prediction)


@dataclass
class PredictionTable:
    """Columnar store of prediction records.

    ``features`` is an (n, d) float array; ``predictions`` and ``targets``
    are length-n float arrays; ``ids`` align with them. All values are
    finite after construction and ids are unique within the table.
    """

    ids: list[str]
    features: np.ndarray
    predictions: np.ndarray
    targets: np.ndarray
    role_tag: str = "cp_train"
    units_label: str = ""

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D array")
        self.predictions = np.asarray(self.predictions, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        n = self.features.shape[0]
        if not (len(self.ids) == len(self.predictions) == len(self.targets) == n):
            raise DataError("column lengths disagree")
        if n == 0:
            raise DataError("empty table")
        if len(set(self.ids)) != n:
            raise DataError("record ids are not unique")
        for name, arr in (("features", self.features),
                          ("predictions", self.predictions),
                          ("targets", self.targets)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite value in {name}")

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def residuals(self) -> np.ndarray:
        return np.abs(self.targets - self.predictions)

    def __len__(self) -> int:
        return len(self.ids)

    def record(self, i: int) -> PredictionRecord:
        return PredictionRecord(self.ids[i], self.features[i],
                                float(self.predictions[i]), float(self.targets[i]))

    def __iter__(self) -> Iterator[PredictionRecord]:
        return (self.record(i) for i in range(len(self)))

    @property
    def records(self) -> list[PredictionRecord]:
        return list(self)

    def take(self, indices: Sequence[int], role_tag: str | None = None) -> "PredictionTable":
        """New table holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=int)
        return PredictionTable(
            ids=[self.ids[i] for i in idx],
            features=self.features[idx],
            predictions=self.predictions[idx],
            targets=self.targets[idx],
            role_tag=role_tag if role_tag is not None else self.role_tag,
            units_label=self.units_label,
        )


@dataclass(frozen=True)
class TableSchema:
    """Column mapping for :func:`load_table`.

    ``feature_columns=None`` means: every header column that is not the id,
    prediction, or target column is a feature, in header order.
    """

    id_column: str = "id"
    prediction_column: str = "prediction"
    target_column: str = "target"
    feature_columns: tuple[str, ...] | None = None


def _parse_cell(token: str) -> float:
    """Parse a numeric cell; NaN tokens and non-finite values become nan.

    Raises DataError for tokens that are not numbers at all (distinct from
    the NaN policy, which only governs missing/non-finite values).
    """
    stripped = token.strip()
    if stripped.lower() in NAN_TOKENS:
        return math.nan
    try:
        value = float(stripped)
    except ValueError:
        raise DataError(f"non-numeric cell {token!r} in a numeric column") from None
    if not math.isfinite(value):
        return math.nan
    return value


def load_table(path: str, schema: TableSchema = TableSchema(),
               nan_policy: str = "drop_rows", role_tag: str = "cp_train",
               units_label: str = "") -> tuple[PredictionTable, int]:
    """Load a prediction table from CSV, applying the NaN policy.

    Parameters
    ----------
    path : str
        CSV file, UTF-8, comma-delimited, one header row.
    schema : TableSchema
        Column mapping; by default features are all columns other than
        ``id``/``prediction``/``target``.
    nan_policy : {"drop_rows", "fail"}
        ``drop_rows`` excludes every row containing a NaN token (empty cell,
        "NaN"/"nan" case-insensitive) or a non-finite value; ``fail`` aborts
        on the first such row.

    Returns
    -------
    (table, dropped) : tuple[PredictionTable, int]
        The loaded table and the number of rows dropped by the policy.
    """
    if nan_policy not in ("drop_rows", "fail"):
        raise ValueError(f"unknown nan_policy {nan_policy!r}")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        positions = {name: i for i, name in enumerate(header)}
        if len(positions) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        for required in (schema.prediction_column, schema.target_column):
            if required not in positions:
                raise DataError(f"{path}: missing required column {required!r}")
        has_id = schema.id_column in positions
        if schema.feature_columns is not None:
            missing = [c for c in schema.feature_columns if c not in positions]
            if missing:
                raise DataError(f"{path}: missing feature columns {missing}")
            feature_names = list(schema.feature_columns)
        else:
            reserved = {schema.prediction_column, schema.target_column}
            if has_id:
                reserved.add(schema.id_column)
            feature_names = [h for h in header if h not in reserved]
        feat_pos = [positions[c] for c in feature_names]
        pred_pos = positions[schema.prediction_column]
        targ_pos = positions[schema.target_column]
        id_pos = positions[schema.id_column] if has_id else None

        ids: list[str] = []
        rows: list[list[float]] = []
        preds: list[float] = []
        targs: list[float] = []
        dropped = 0
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, "
                                f"got {len(raw)}")
            cells = [_parse_cell(raw[p]) for p in feat_pos]
            pred = _parse_cell(raw[pred_pos])
            targ = _parse_cell(raw[targ_pos])
            if any(math.isnan(v) for v in cells) or math.isnan(pred) or math.isnan(targ):
                if nan_policy == "fail":
                    raise DataError(f"{path}:{lineno}: NaN under fail policy")
                dropped += 1
                continue
            ids.append(raw[id_pos].strip() if id_pos is not None else str(len(ids)))
            rows.append(cells)
            preds.append(pred)
            targs.append(targ)
    if not rows:
        raise DataError(f"{path}: empty table after applying NaN policy "
                        f"({dropped} rows dropped)")
    table = PredictionTable(ids=ids,
                            features=np.asarray(rows, dtype=float),
                            predictions=np.asarray(preds, dtype=float),
                            targets=np.asarray(targs, dtype=float),
                            role_tag=role_tag, units_label=units_label)
    return table, dropped


def write_table(table: PredictionTable, path: str) -> None:
    """Write a table in the CSV schema that :func:`load_table` reads back:
    header ``id,prediction,target,f0..f{d-1}``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "prediction", "target"]
                        + [f"f{j}" for j in range(table.dimension)])
        for i in range(len(table)):
            writer.writerow([table.ids[i],
                             repr(float(table.predictions[i])),
                             repr(float(table.targets[i]))]
                            + [repr(float(v)) for v in table.features[i]])


def split_calibration(table: PredictionTable, n_cal: int,
                      seed: int) -> tuple[PredictionTable, PredictionTable]:
    """Split off a calibration set of exactly ``n_cal`` rows.

    Rows are sampled uniformly without replacement via a seeded permutation
    (take the first ``n_cal`` positions). Both halves keep the original row
    order; their union is the input and they are disjoint. Sampling is
    plain uniform: no stratification over feature clusters is attempted.
    """
    n = len(table)
    if not 1 <= n_cal < n:
        raise InfeasibleError(f"n_cal={n_cal} out of range for table of size {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cal_idx = np.sort(perm[:n_cal])
    train_idx = np.sort(perm[n_cal:])
    return (table.take(train_idx, role_tag="cp_train"),
            table.take(cal_idx, role_tag="calibration"))


# Named functions for the synthetic generator. Each maps an (n, d) feature
# matrix to a length-n vector.
SIGNALS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda x: np.zeros(x.shape[0]),
    "mean": lambda x: x.mean(axis=1),
    "sine": lambda x: np.sin(x[:, 0]),
}

NOISE_SCALES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda x: np.zeros(x.shape[0]),
    "unit": lambda x: np.ones(x.shape[0]),
    "one_plus_abs_x0": lambda x: 1.0 + np.abs(x[:, 0]),
    "half_x0_squared": lambda x: 0.5 * x[:, 0] ** 2,
}


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for heteroscedastic synthetic data.

    target = signal(x) + noise_scale(x) * z with z ~ N(0, 1); the prediction
    column is filled by the oracle surrogate signal(x) + prediction_bias.
    Rows are i.i.d., hence exchangeable.
    """

    n: int
    d: int
    signal: str = "zero"
    noise_scale: str = "unit"
    seed: int = 0
    prediction_bias: float = 0.0
    units_label: str = ""

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.signal not in SIGNALS:
            raise ValueError(f"unknown signal function {self.signal!r}")
        if self.noise_scale not in NOISE_SCALES:
            raise ValueError(f"unknown noise_scale function {self.noise_scale!r}")


def synth_heteroscedastic(spec: SynthSpec, role_tag: str = "cp_train") -> PredictionTable:
    """Generate an exchangeable synthetic prediction table under ``spec.seed``.

    Features are i.i.d. standard normal. The same spec always yields the
    same table.
    """
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.n, spec.d))
    z = rng.standard_normal(spec.n)
    signal = SIGNALS[spec.signal](x)
    scale = NOISE_SCALES[spec.noise_scale](x)
    if np.any(scale < 0):
        raise ValueError("noise_scale must be nonnegative")
    targets = signal + scale * z
    predictions = signal + spec.prediction_bias
    ids = [str(i) for i in range(spec.n)]
    return PredictionTable(ids=ids, features=x, predictions=predictions,
                           targets=targets, role_tag=role_tag,
                           units_label=spec.units_label)


def true_noise_scale(spec: SynthSpec, table: PredictionTable) -> np.ndarray:
    """The generator's noise scale evaluated at the table's features."""
    return NOISE_SCALES[spec.noise_scale](table.features)
