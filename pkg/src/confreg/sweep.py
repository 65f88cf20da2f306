"""Hyperparameter grid execution with an append-only JSONL ledger.

The grid crosses estimator configurations (kind x plain/Mondrian), the
neighbour count k, the Mondrian bin count, seeds, and confidence levels.
Each seed drives one calibration subsample of the training pool; the
neighbour index is built once per seed and queried once at the largest k,
so every smaller k reuses the same neighbour lists. Results stream to a
JSON-lines ledger keyed by config id; a re-run skips keys that are already
present. Infeasible cells (e.g. Mondrian bin underflow) are recorded and
skipped rather than aborting the sweep.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conformal import MondrianSpec, fit_cps, fit_regressor
from .dataset import (PredictionTable, SynthSpec, TableSchema, load_table,
                      split_calibration, synth_heteroscedastic)
from .difficulty import (DEFAULT_BETA, KIND_FROM_CLI, EstimatorSpec,
                         fit_estimator, sigmas_from_positions)
from .errors import DataError, InfeasibleError
from .evaluation import RunResult, effective_coverage, mean_width
from .neighbors import apply_scaler, build_index, fit_scaler, knn_query_batch
from .pipeline import fit_binned_cps

DEFAULT_K_GRID = tuple(range(10, 101, 10))
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_CONFIDENCES = (0.90, 0.95)
# The five estimator configurations swept by default.
DEFAULT_ESTIMATORS = (
    ("norm_std", False),
    ("norm_targ_strng", False),
    ("norm_std", True),
    ("norm_res", True),
    ("norm_targ_strng", True),
)
CALIBRATION_SIZE_GUIDANCE = 1000


@dataclass(frozen=True)
class CsvData:
    train_path: str
    test_path: str
    nan_policy: str = "drop_rows"
    units_label: str = ""


@dataclass(frozen=True)
class SynthData:
    n_pool: int
    n_test: int
    d: int
    signal: str = "mean"
    noise_scale: str = "one_plus_abs_x0"
    seed: int = 0
    prediction_bias: float = 0.0
    units_label: str = ""


@dataclass(frozen=True)
class SweepConfig:
    data: CsvData | SynthData
    n_cal: int
    dataset: str = "default"
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    bins_grid: tuple[int, ...] | None = None
    bins_max: int = 100
    estimators: tuple[tuple[str, bool], ...] = DEFAULT_ESTIMATORS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    confidences: tuple[float, ...] = DEFAULT_CONFIDENCES
    beta: float = DEFAULT_BETA
    method: str = "cps"
    mondrian_attr: str = "difficulty"
    min_bin_size: int = 20
    tie_tau: float = 0.5

    def __post_init__(self) -> None:
        if not self.k_grid:
            raise ValueError("empty k grid")
        if self.bins_grid is not None and not self.bins_grid:
            raise ValueError("empty bins grid")
        if not self.seeds or not self.confidences or not self.estimators:
            raise ValueError("grid axes must be nonempty")
        if self.n_cal < 1:
            raise ValueError("n_cal must be >= 1")
        for name, _ in self.estimators:
            if name not in KIND_FROM_CLI:
                raise ValueError(f"unknown estimator {name!r}")
        if self.method not in ("cr", "cps"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def resolved_bins_grid(self) -> tuple[int, ...]:
        if self.bins_grid is not None:
            return self.bins_grid
        return tuple(range(10, self.bins_max + 1, 10))


@dataclass(frozen=True)
class Cell:
    estimator: str
    mondrian: bool
    k: int
    bins: int | None
    seed: int
    confidence: float


def resolve_grid(config: SweepConfig) -> list[Cell]:
    """All cells of the grid in canonical order. Plain estimator
    configurations ignore the bins axis."""
    cells = []
    for seed in config.seeds:
        for name, mondrian in config.estimators:
            for k in config.k_grid:
                bins_axis = config.resolved_bins_grid if mondrian else (None,)
                for bins in bins_axis:
                    for conf in config.confidences:
                        cells.append(Cell(name, mondrian, k, bins, seed, conf))
    return cells


def config_from_json(doc: dict) -> SweepConfig:
    """Build a SweepConfig from its JSON document form."""
    data_doc = dict(doc["data"])
    kind = data_doc.pop("kind")
    if kind == "csv":
        data = CsvData(**data_doc)
    elif kind == "synth":
        data = SynthData(**data_doc)
    else:
        raise ValueError(f"unknown data kind {kind!r}")
    estimators = doc.get("estimators")
    if estimators is not None:
        estimators = tuple((e["kind"], bool(e.get("mondrian", False)))
                           for e in estimators)
    kwargs = {}
    for key in ("dataset", "n_cal", "bins_max", "beta", "method",
                "mondrian_attr", "min_bin_size", "tie_tau"):
        if key in doc:
            kwargs[key] = doc[key]
    for key in ("k_grid", "bins_grid", "seeds", "confidences"):
        if key in doc and doc[key] is not None:
            kwargs[key] = tuple(doc[key])
    if estimators is not None:
        kwargs["estimators"] = estimators
    return SweepConfig(data=data, **kwargs)


def read_ledger(path: str | Path) -> list[RunResult]:
    path = Path(path)
    if not path.exists():
        return []
    results = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                results.append(RunResult.from_json_dict(json.loads(line)))
    return results


def append_results(path: str | Path, results: list[RunResult]) -> None:
    with Path(path).open("a", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json_dict()) + "\n")


def _load_pool_and_test(config: SweepConfig) -> tuple[PredictionTable, PredictionTable]:
    data = config.data
    if isinstance(data, CsvData):
        pool, _ = load_table(data.train_path, TableSchema(),
                             nan_policy=data.nan_policy,
                             role_tag="cp_train", units_label=data.units_label)
        test, _ = load_table(data.test_path, TableSchema(),
                             nan_policy=data.nan_policy,
                             role_tag="test", units_label=data.units_label)
        return pool, test
    pool = synth_heteroscedastic(
        SynthSpec(n=data.n_pool, d=data.d, signal=data.signal,
                  noise_scale=data.noise_scale, seed=data.seed,
                  prediction_bias=data.prediction_bias,
                  units_label=data.units_label))
    test = synth_heteroscedastic(
        SynthSpec(n=data.n_test, d=data.d, signal=data.signal,
                  noise_scale=data.noise_scale, seed=data.seed + 1,
                  prediction_bias=data.prediction_bias,
                  units_label=data.units_label),
        role_tag="test")
    return pool, test


@dataclass
class _SeedContext:
    """Everything shared by the cells of one seed."""

    cal: PredictionTable
    test: PredictionTable
    index: object
    cal_positions: np.ndarray
    test_positions: np.ndarray
    sigma_cache: dict = field(default_factory=dict)

    def sigmas(self, spec: EstimatorSpec) -> tuple[np.ndarray, np.ndarray]:
        key = (spec.kind, spec.k, spec.beta)
        if key not in self.sigma_cache:
            self.sigma_cache[key] = (
                sigmas_from_positions(self.index, self.cal_positions, spec,
                                      self.cal.predictions),
                sigmas_from_positions(self.index, self.test_positions, spec,
                                      self.test.predictions),
            )
        return self.sigma_cache[key]


def _build_seed_context(pool: PredictionTable, test: PredictionTable,
                        config: SweepConfig, seed: int, k_max: int) -> _SeedContext:
    train, cal = split_calibration(pool, config.n_cal, seed)
    # Cells whose k exceeds the CP-train size fail individually in
    # fit_estimator; the shared query only needs the feasible prefix.
    k_shared = min(k_max, len(train))
    scaler = fit_scaler(train)
    index = build_index(train, scaler)
    cal_positions, _ = knn_query_batch(index, apply_scaler(scaler, cal.features),
                                       k_shared)
    test_positions, _ = knn_query_batch(index, apply_scaler(scaler, test.features),
                                        k_shared)
    return _SeedContext(cal=cal, test=test, index=index,
                        cal_positions=cal_positions,
                        test_positions=test_positions)


def _run_cell(ctx: _SeedContext, config: SweepConfig, cell: Cell) -> RunResult:
    base = dict(estimator=cell.estimator, k=cell.k, bins=cell.bins,
                seed=cell.seed, confidence=cell.confidence,
                n_test=len(ctx.test), dataset=config.dataset)
    spec = EstimatorSpec(kind=KIND_FROM_CLI[cell.estimator], k=cell.k,
                         beta=config.beta)
    try:
        estimator = fit_estimator(spec, ctx.index)
        cal_sigmas, test_sigmas = ctx.sigmas(spec)
        mondrian = None
        cal_bin_values = test_bin_values = None
        if cell.mondrian:
            mondrian = MondrianSpec(attribute=config.mondrian_attr,
                                    n_bins=cell.bins,
                                    min_bin_size=config.min_bin_size)
            if config.mondrian_attr == "difficulty":
                cal_bin_values, test_bin_values = cal_sigmas, test_sigmas
            else:
                cal_bin_values = ctx.cal.predictions
                test_bin_values = ctx.test.predictions
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if config.method == "cr":
                cr = fit_regressor(ctx.cal, estimator, mondrian,
                                   cal_sigmas=cal_sigmas)
                intervals = cr.predict_intervals(ctx.test.predictions,
                                                 sigmas=test_sigmas,
                                                 bin_values=test_bin_values,
                                                 confidence=cell.confidence)
            elif mondrian is None:
                cps = fit_cps(ctx.cal, estimator, config.tie_tau,
                              cal_sigmas=cal_sigmas)
                intervals = cps.intervals(ctx.test.predictions, test_sigmas,
                                          cell.confidence)
            else:
                binned = fit_binned_cps(ctx.cal, estimator, mondrian,
                                        config.tie_tau, cal_sigmas=cal_sigmas)
                intervals = [
                    binned.interval(float(ctx.test.predictions[i]),
                                    sigma=float(test_sigmas[i]),
                                    bin_value=float(test_bin_values[i]),
                                    confidence=cell.confidence)
                    for i in range(len(ctx.test))]
    except InfeasibleError:
        return RunResult(mean_width=math.inf, coverage=math.nan,
                         status="infeasible", **base)
    width = mean_width(intervals)
    coverage = effective_coverage(intervals, ctx.test.targets)
    status = "ok" if math.isfinite(width) else "unbounded"
    return RunResult(mean_width=width, coverage=coverage, status=status, **base)


def run_sweep(config: SweepConfig, ledger_path: str | Path,
              workers: int = 1) -> list[RunResult]:
    """Execute every grid cell not yet present in the ledger.

    Returns the newly computed results, in the canonical grid order in
    which they were appended to the ledger.
    """
    if config.n_cal < CALIBRATION_SIZE_GUIDANCE:
        warnings.warn(f"calibration size {config.n_cal} is below the "
                      f"recommended {CALIBRATION_SIZE_GUIDANCE}")
    pool, test = _load_pool_and_test(config)
    if not 1 <= config.n_cal < len(pool):
        raise DataError(f"n_cal={config.n_cal} out of range for pool "
                        f"of size {len(pool)}")
    done = {r.config_id for r in read_ledger(ledger_path)}
    cells = resolve_grid(config)
    k_max = max(c.k for c in cells)
    new_results: list[RunResult] = []
    for seed in config.seeds:
        seed_cells = [c for c in cells if c.seed == seed]
        pending = [c for c in seed_cells
                   if _cell_config_id(config, c) not in done]
        if not pending:
            continue
        ctx = _build_seed_context(pool, test, config, seed, k_max)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool_exec:
                results = list(pool_exec.map(
                    lambda c: _run_cell(ctx, config, c), pending))
        else:
            results = [_run_cell(ctx, config, c) for c in pending]
        append_results(ledger_path, results)
        new_results.extend(results)
    return new_results


def _cell_config_id(config: SweepConfig, cell: Cell) -> str:
    bins = "-" if cell.bins is None else str(cell.bins)
    return (f"{config.dataset}|{cell.estimator}|k={cell.k}|bins={bins}"
            f"|conf={cell.confidence!r}|seed={cell.seed}")
