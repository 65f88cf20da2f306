"""Command-line entry: flags mirror ExportSpec."""

from __future__ import annotations

import argparse
import sys

from .export import ExportSpec, export_features, validate_schema


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feature-export",
        description="Dump a model's pre-fusion branch activations to CSV.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="run the model and write the feature table")
    p.add_argument("--model", default="toy-two-branch",
                   help="model id (toy-two-branch[:seed]) or state-dict path")
    p.add_argument("--dataset", required=True,
                   help="raw CSV with text, numeric, and target columns")
    p.add_argument("--layer-tags", default="text,numeric",
                   help="comma-separated branches to capture, concatenated "
                        "in order (e.g. 'text' or 'text,numeric')")
    p.add_argument("--out", required=True)
    p.add_argument("--role-tag", default="cp_train",
                   choices=("cp_train", "calibration", "test"))
    p.add_argument("--text-column", default="text")
    p.add_argument("--target-column", default="target")
    p.add_argument("--id-column", default="id")
    p.add_argument("--batch-size", type=int, default=32)

    v = sub.add_parser("validate", help="check an exported file's schema")
    v.add_argument("path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        violations = validate_schema(args.path)
        for item in violations:
            print(item, file=sys.stderr)
        print(f"{args.path}: {'ok' if not violations else f'{len(violations)} violations'}")
        return 0 if not violations else 1

    spec = ExportSpec(model_id=args.model,
                      dataset_path=args.dataset,
                      layer_tags=tuple(t.strip() for t in
                                       args.layer_tags.split(",") if t.strip()),
                      output_path=args.out,
                      role_tag=args.role_tag,
                      text_column=args.text_column,
                      target_column=args.target_column,
                      id_column=args.id_column,
                      batch_size=args.batch_size)
    try:
        path, dimension = export_features(spec)
    except (ValueError, OSError) as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    print(f"exported {path} (d={dimension}, role={spec.role_tag})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
