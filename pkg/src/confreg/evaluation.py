"""Coverage/width metrics, cross-seed aggregation, and winner selection.

A sweep produces one :class:`RunResult` per grid cell; aggregation groups
cells that differ only by seed, drops runs whose effective coverage does
not exceed the coverage floor (or whose width is unbounded), and summarizes
the survivors. :func:`select_best` then picks, per estimator
configuration, the recorded summary with the narrowest mean width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .conformal import PredictionInterval

DEFAULT_COVERAGE_FLOOR = 0.89


def effective_coverage(intervals: Sequence[PredictionInterval],
                       targets: Sequence[float]) -> float:
    """Fraction of targets inside their (closed) intervals; infinite
    endpoints count as covering."""
    if len(intervals) != len(targets):
        raise ValueError("intervals and targets differ in length")
    if not intervals:
        raise ValueError("no intervals")
    hits = sum(1 for iv, y in zip(intervals, targets) if iv.covers(y))
    return hits / len(intervals)


def mean_width(intervals: Sequence[PredictionInterval]) -> float:
    """Mean of (upper − lower); +inf as soon as any interval is unbounded."""
    if not intervals:
        raise ValueError("no intervals")
    if any(not iv.bounded for iv in intervals):
        return math.inf
    return float(np.mean([iv.width for iv in intervals]))


@dataclass(frozen=True)
class RunResult:
    """Metrics of one sweep cell: a single (estimator, k, bins, confidence,
    seed) combination on one dataset."""

    estimator: str            # CLI name, e.g. "norm_std"
    k: int
    bins: int | None          # None for plain (non-Mondrian) variants
    seed: int
    confidence: float
    mean_width: float         # +inf when any test interval was unbounded
    coverage: float
    n_test: int
    status: str = "ok"        # "ok" | "unbounded" | "infeasible"
    dataset: str = "default"

    @property
    def config_id(self) -> str:
        return f"{self.seedless_config_id}|seed={self.seed}"

    @property
    def seedless_config_id(self) -> str:
        bins = "-" if self.bins is None else str(self.bins)
        return (f"{self.dataset}|{self.estimator}|k={self.k}|bins={bins}"
                f"|conf={self.confidence!r}")

    def to_json_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "estimator": self.estimator,
            "k": self.k,
            "bins": self.bins,
            "seed": self.seed,
            "confidence": self.confidence,
            "mean_width": None if not math.isfinite(self.mean_width) else self.mean_width,
            "coverage": None if math.isnan(self.coverage) else self.coverage,
            "n_test": self.n_test,
            "status": self.status,
            "dataset": self.dataset,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunResult":
        width = d.get("mean_width")
        coverage = d.get("coverage")
        return cls(estimator=d["estimator"], k=int(d["k"]),
                   bins=None if d.get("bins") is None else int(d["bins"]),
                   seed=int(d["seed"]), confidence=float(d["confidence"]),
                   mean_width=math.inf if width is None else float(width),
                   coverage=math.nan if coverage is None else float(coverage),
                   n_test=int(d["n_test"]), status=d.get("status", "ok"),
                   dataset=d.get("dataset", "default"))


@dataclass(frozen=True)
class EvaluationSummary:
    """Per-configuration aggregate over seeds, after the coverage filter."""

    config_id: str            # seedless
    dataset: str
    estimator: str
    k: int
    bins: int | None
    confidence: float
    recorded: bool
    mean_of_widths: float | None = None
    std_of_widths: float | None = None
    mean_coverage: float | None = None
    n_runs_aggregated: int = 0
    n_unbounded_excluded: int = 0


def aggregate_runs(results: Iterable[RunResult],
                   coverage_floor: float = DEFAULT_COVERAGE_FLOOR) -> list[EvaluationSummary]:
    """Aggregate runs that differ only by seed.

    A run survives only with coverage strictly above ``coverage_floor``, a
    finite width, and an "ok"/"unbounded"-free status; configurations with
    no survivor come back with ``recorded=False``. Width spread uses the
    population convention, so one survivor reports a std of 0.0.
    """
    groups: dict[str, list[RunResult]] = {}
    order: list[str] = []
    for r in results:
        key = r.seedless_config_id
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    summaries = []
    for key in order:
        runs = groups[key]
        proto = runs[0]
        usable = [r for r in runs if r.status == "ok"]
        n_unbounded = sum(1 for r in runs
                          if r.status == "unbounded"
                          or (r.status == "ok" and not math.isfinite(r.mean_width)))
        survivors = [r for r in usable
                     if math.isfinite(r.mean_width) and r.coverage > coverage_floor]
        base = dict(config_id=key, dataset=proto.dataset, estimator=proto.estimator,
                    k=proto.k, bins=proto.bins, confidence=proto.confidence,
                    n_unbounded_excluded=n_unbounded)
        if not survivors:
            summaries.append(EvaluationSummary(recorded=False, **base))
            continue
        widths = np.array([r.mean_width for r in survivors])
        summaries.append(EvaluationSummary(
            recorded=True,
            mean_of_widths=float(widths.mean()),
            std_of_widths=float(widths.std()),
            mean_coverage=float(np.mean([r.coverage for r in survivors])),
            n_runs_aggregated=len(survivors),
            **base))
    return summaries


def _variant_key(summary: EvaluationSummary) -> tuple[str, str, str]:
    variant = "plain" if summary.bins is None else "mondrian"
    return (summary.dataset, summary.estimator, variant)


def select_best(summaries: Iterable[EvaluationSummary]) -> dict[tuple[str, str, str], EvaluationSummary]:
    """Narrowest recorded configuration per (dataset, estimator, variant).

    Ties break toward smaller k, then smaller bin count; estimators with no
    recorded summary are simply absent from the result.
    """
    winners: dict[tuple[str, str, str], EvaluationSummary] = {}
    for s in summaries:
        if not s.recorded:
            continue
        key = _variant_key(s)
        cur = winners.get(key)
        rank = (s.mean_of_widths, s.k, s.bins if s.bins is not None else 0)
        if cur is None:
            winners[key] = s
            continue
        cur_rank = (cur.mean_of_widths, cur.k, cur.bins if cur.bins is not None else 0)
        if rank < cur_rank:
            winners[key] = s
    return winners
