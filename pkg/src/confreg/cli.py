"""Command-line front end.

Subcommands: split, synth, pipeline, sweep, report, plot-data.
Exit codes: 0 success, 2 usage error, 3 data error, 4 infeasible
configuration (e.g. Mondrian bin underflow).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .conformal import MondrianSpec
from .dataset import (NOISE_SCALES, SIGNALS, SynthSpec, TableSchema,
                      load_table, split_calibration, synth_heteroscedastic,
                      write_table)
from .difficulty import DEFAULT_BETA, KIND_FROM_CLI, EstimatorSpec
from .errors import DataError, InfeasibleError
from .evaluation import (DEFAULT_COVERAGE_FLOOR, EvaluationSummary,
                         aggregate_runs, select_best)
from .pipeline import run_conformal
from .sweep import config_from_json, read_ledger, run_sweep

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4

ESTIMATOR_CHOICES = tuple(KIND_FROM_CLI)

# Fixed row order inside each report block.
_REPORT_ROW_ORDER = ("norm_std", "norm_res", "norm_targ_strng")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--confidence", type=float, default=0.9)
    parser.add_argument("--beta", type=float, default=DEFAULT_BETA)
    parser.add_argument("--knn", type=int, default=25)
    parser.add_argument("--bins", type=int, default=10)
    parser.add_argument("--estimator", choices=ESTIMATOR_CHOICES)
    parser.add_argument("--mondrian", action="store_true")
    parser.add_argument("--mondrian-attr", choices=("difficulty", "prediction"),
                        default="difficulty")
    parser.add_argument("--coverage-floor", type=float,
                        default=DEFAULT_COVERAGE_FLOOR)
    parser.add_argument("--nan-policy", choices=("drop", "fail"), default="drop")


def _nan_policy(flag: str) -> str:
    return "drop_rows" if flag == "drop" else "fail"


def _load(path: str, nan_policy: str, role_tag: str, units_label: str = ""):
    table, dropped = load_table(path, TableSchema(), nan_policy=nan_policy,
                                role_tag=role_tag, units_label=units_label)
    if dropped:
        print(f"{path}: dropped {dropped} rows with NaN cells", file=sys.stderr)
    return table


def _fmt_endpoint(value: float) -> str:
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    return repr(float(value))


def cmd_split(args: argparse.Namespace) -> int:
    table = _load(args.input, _nan_policy(args.nan_policy), "cp_train")
    train, cal = split_calibration(table, args.n_cal, args.seed)
    write_table(train, args.train_out)
    write_table(cal, args.cal_out)
    print(f"train: {len(train)} rows -> {args.train_out}")
    print(f"cal:   {len(cal)} rows -> {args.cal_out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(n=args.n, d=args.d, signal=args.signal,
                     noise_scale=args.noise_scale, seed=args.seed,
                     prediction_bias=args.prediction_bias,
                     units_label=args.units)
    table = synth_heteroscedastic(spec)
    write_table(table, args.out)
    print(f"synth: {len(table)} rows -> {args.out}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    policy = _nan_policy(args.nan_policy)
    train = _load(args.train, policy, "cp_train", args.units)
    cal = _load(args.cal, policy, "calibration", args.units)
    test = _load(args.test, policy, "test", args.units)
    estimator_spec = None
    if args.estimator is not None:
        estimator_spec = EstimatorSpec(kind=KIND_FROM_CLI[args.estimator],
                                       k=args.knn, beta=args.beta)
    mondrian = None
    if args.mondrian:
        mondrian = MondrianSpec(attribute=args.mondrian_attr, n_bins=args.bins,
                                min_bin_size=args.min_bin_size)
    run = run_conformal(train, cal, test, estimator_spec, mondrian,
                        method=args.method, confidence=args.confidence)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    intervals_path = out_dir / "intervals.csv"
    with intervals_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "prediction", "lower", "upper", "target"])
        for i, iv in enumerate(run.intervals):
            writer.writerow([test.ids[i], repr(float(test.predictions[i])),
                             _fmt_endpoint(iv.lower), _fmt_endpoint(iv.upper),
                             repr(float(test.targets[i]))])
    metrics = {
        "n_test": len(test),
        "coverage": run.coverage,
        "mean_width": None if not math.isfinite(run.mean_width) else run.mean_width,
        "unbounded_count": run.unbounded_count,
        "confidence": args.confidence,
        "estimator": args.estimator,
        "knn": args.knn if estimator_spec is not None else None,
        "mondrian": args.mondrian,
        "bins": args.bins if mondrian is not None else None,
        "method": args.method,
        "units_label": test.units_label,
    }
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    print(f"intervals -> {intervals_path}")
    print(f"metrics   -> {metrics_path}")
    print(f"coverage {run.coverage:.4f}, mean width "
          f"{'unbounded' if not math.isfinite(run.mean_width) else format(run.mean_width, '.4f')}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read sweep config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid sweep config JSON: {exc}") from exc
    try:
        config = config_from_json(doc)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"bad sweep config: {exc}") from exc
    results = run_sweep(config, args.ledger, workers=args.workers)
    total = len(read_ledger(args.ledger))
    print(f"computed {len(results)} new cells; ledger now holds {total} rows "
          f"-> {args.ledger}")
    return EXIT_OK


def _fmt_cell(value, pattern: str) -> str:
    return "" if value is None else format(value, pattern)


def _report_rows(summaries: list[EvaluationSummary]) -> list[dict]:
    """Flatten winner-per-estimator summaries into results-table rows."""
    winners = select_best(summaries)
    datasets: list[str] = []
    for s in summaries:
        if s.dataset not in datasets:
            datasets.append(s.dataset)
    rows = []
    for dataset in datasets:
        block_rows = []
        for variant in ("plain", "mondrian"):
            present = [name for name in _REPORT_ROW_ORDER
                       if any(s.dataset == dataset and s.estimator == name
                              and (s.bins is None) == (variant == "plain")
                              for s in summaries)]
            for name in present:
                best = winners.get((dataset, name, variant))
                block_rows.append({
                    "dataset": dataset,
                    "variant": variant,
                    "configuration": name,
                    "width": None if best is None else best.mean_of_widths,
                    "coverage_pct": None if best is None else 100 * best.mean_coverage,
                    "knn": None if best is None else best.k,
                    "bins": None if best is None or variant == "plain" else best.bins,
                    "highlight": False,
                })
        recorded = [r for r in block_rows if r["width"] is not None]
        if recorded:
            top = min(recorded, key=lambda r: r["width"])
            top["highlight"] = True
        rows.extend(block_rows)
    return rows


def write_report(summaries: list[EvaluationSummary], out_dir: Path,
                 units_label: str = "") -> tuple[Path, Path]:
    rows = _report_rows(summaries)
    units = f" [{units_label}]" if units_label else ""
    header = ["Configuration", f"Mean PI Width{units}", "Effective Coverage [%]",
              "kNN", "Bins", "Winner"]
    out_dir.mkdir(parents=True, exist_ok=True)

    def _emit(write_row, marker):
        current_dataset = None
        in_mondrian = False
        for row in rows:
            if row["dataset"] != current_dataset:
                write_row(marker(row["dataset"]))
                current_dataset = row["dataset"]
                in_mondrian = False
            if row["variant"] == "mondrian" and not in_mondrian:
                write_row(marker("Mondrians"))
                in_mondrian = True
            write_row([row["configuration"],
                       _fmt_cell(row["width"], ".1f"),
                       _fmt_cell(row["coverage_pct"], ".1f"),
                       _fmt_cell(row["knn"], "d"),
                       _fmt_cell(row["bins"], "d"),
                       "yes" if row["highlight"] else ""])

    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        _emit(writer.writerow, lambda label: [label, "", "", "", "", ""])

    txt_path = out_dir / "report.txt"
    widths = [24, 18, 22, 5, 5, 6]
    with txt_path.open("w", encoding="utf-8") as fh:
        fh.write("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip() + "\n")
        _emit(lambda cells: fh.write(
            "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip() + "\n"),
            lambda label: [f"-- {label} --", "", "", "", "", ""])
    return csv_path, txt_path


def cmd_report(args: argparse.Namespace) -> int:
    results = read_ledger(args.ledger)
    if not results:
        raise DataError(f"empty ledger: {args.ledger}")
    summaries = aggregate_runs(results, coverage_floor=args.coverage_floor)
    csv_path, txt_path = write_report(summaries, Path(args.out_dir),
                                      units_label=args.units)
    print(f"report -> {csv_path} and {txt_path}")
    return EXIT_OK


def cmd_plot_data(args: argparse.Namespace) -> int:
    try:
        fh = open(args.intervals, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {args.intervals}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        required = {"prediction", "lower", "upper", "target"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{args.intervals}: expected columns {sorted(required)}")
        rows = [(float(r["prediction"]), float(r["lower"]), float(r["upper"]),
                 float(r["target"])) for r in reader]
    if not rows:
        raise DataError(f"{args.intervals}: no data rows")
    order = sorted(range(len(rows)), key=lambda i: rows[i][0])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "prediction", "lower", "upper", "target", "covered"])
        for rank, i in enumerate(order):
            pred, lower, upper, target = rows[i]
            covered = 1 if lower <= target <= upper else 0
            writer.writerow([rank, repr(pred), _fmt_endpoint(lower),
                             _fmt_endpoint(upper), repr(target), covered])
    print(f"plot data -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confreg",
        description="Split conformal regression intervals, difficulty "
                    "estimators, Mondrian categories, and predictive systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split a table into CP-train and calibration")
    _add_common_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--n-cal", type=int, required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--cal-out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("synth", help="generate a synthetic heteroscedastic table")
    _add_common_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--signal", choices=sorted(SIGNALS), default="zero")
    p.add_argument("--noise-scale", choices=sorted(NOISE_SCALES), default="unit")
    p.add_argument("--prediction-bias", type=float, default=0.0)
    p.add_argument("--units", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="tables in, intervals and metrics out")
    _add_common_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--cal", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--method", choices=("cr", "cps"), default="cps")
    p.add_argument("--min-bin-size", type=int, default=20)
    p.add_argument("--units", default="")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="run the hyperparameter grid into a ledger")
    _add_common_flags(p)
    p.add_argument("--config", required=True, help="sweep config JSON document")
    p.add_argument("--ledger", required=True, help="JSON-lines results ledger")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate a ledger into results tables")
    _add_common_flags(p)
    p.add_argument("--ledger", required=True)
    p.add_argument("--units", default="")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot-data", help="sorted interval rows for plotting")
    _add_common_flags(p)
    p.add_argument("--intervals", required=True,
                   help="intervals.csv as written by the pipeline command")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not 0.0 < args.confidence < 1.0:
        parser.error("--confidence must be in (0, 1)")
    if getattr(args, "mondrian", False) and args.mondrian_attr == "difficulty" \
            and args.estimator is None:
        parser.error("--mondrian with difficulty binning requires --estimator")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
