"""Run a model over a raw dataset and dump the activations entering its
combining stage, one CSV row per instance, in the conformal toolkit's
table schema: ``id, prediction, target, f0..f{d-1}``.

Each requested branch is captured with a forward hook at the fusion
boundary; multiple tags are concatenated in the order given, so branch-only
files and fused files come from the same capture points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import torch

from .model import build_model, tokenize


@dataclass(frozen=True)
class ExportSpec:
    model_id: str
    dataset_path: str
    layer_tags: tuple[str, ...]
    output_path: str
    role_tag: str = "cp_train"
    text_column: str = "text"
    target_column: str = "target"
    id_column: str = "id"
    batch_size: int = 32

    def __post_init__(self) -> None:
        if not self.layer_tags:
            raise ValueError("at least one layer tag is required")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class RawDataset:
    ids: list[str]
    texts: list[str]
    numerics: list[list[float]]
    targets: list[float]
    numeric_columns: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)


def read_raw_dataset(spec: ExportSpec) -> RawDataset:
    with open(spec.dataset_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{spec.dataset_path}: empty file")
        for required in (spec.text_column, spec.target_column):
            if required not in reader.fieldnames:
                raise ValueError(f"{spec.dataset_path}: missing column "
                                 f"{required!r}")
        numeric_columns = [c for c in reader.fieldnames
                           if c not in (spec.id_column, spec.text_column,
                                        spec.target_column)]
        data = RawDataset([], [], [], [], numeric_columns)
        for i, row in enumerate(reader):
            data.ids.append(row.get(spec.id_column) or str(i))
            data.texts.append(row[spec.text_column])
            data.numerics.append([float(row[c]) for c in numeric_columns])
            data.targets.append(float(row[spec.target_column]))
    if not len(data):
        raise ValueError(f"{spec.dataset_path}: no data rows")
    return data


def _capture_batch(model, tags, texts, numerics):
    """One forward pass with hooks on the requested branches; returns the
    per-tag activations and the model predictions."""
    captured: dict[str, torch.Tensor] = {}
    handles = []
    for tag in tags:
        module = model.branch_module(tag)
        handles.append(module.register_forward_hook(
            lambda _m, _inp, out, tag=tag: captured.__setitem__(
                tag, out.detach())))
    try:
        token_lists = [tokenize(t) for t in texts]
        offsets = torch.tensor(
            [0] + [len(t) for t in token_lists[:-1]], dtype=torch.long).cumsum(0)
        token_ids = torch.tensor([tok for ts in token_lists for tok in ts],
                                 dtype=torch.long)
        numeric_tensor = torch.tensor(numerics, dtype=torch.float32)
        with torch.no_grad():
            predictions = model(token_ids, offsets, numeric_tensor)
    finally:
        for handle in handles:
            handle.remove()
    missing = [tag for tag in tags if tag not in captured]
    if missing:
        raise ValueError(f"layer tags {missing} produced no activations")
    return captured, predictions


def export_features(spec: ExportSpec) -> tuple[str, int]:
    """Write the export CSV; returns (path, feature dimension d)."""
    data = read_raw_dataset(spec)
    model = build_model(spec.model_id, numeric_in=len(data.numeric_columns))
    unknown = [t for t in spec.layer_tags if t not in model.branch_tags]
    if unknown:
        raise ValueError(f"unresolvable layer tags {unknown}; "
                         f"model provides {model.branch_tags}")
    dimension = None
    with open(spec.output_path, "w", newline="", encoding="utf-8") as fh:
        writer = None
        for start in range(0, len(data), spec.batch_size):
            stop = min(start + spec.batch_size, len(data))
            captured, predictions = _capture_batch(
                model, spec.layer_tags, data.texts[start:stop],
                data.numerics[start:stop])
            features = torch.cat([captured[tag] for tag in spec.layer_tags],
                                 dim=1)
            if not torch.isfinite(features).all() or \
                    not torch.isfinite(predictions).all():
                raise ValueError("model emitted non-finite activations")
            if writer is None:
                dimension = features.shape[1]
                writer = csv.writer(fh)
                writer.writerow(["id", "prediction", "target"]
                                + [f"f{j}" for j in range(dimension)])
            for i in range(stop - start):
                row_features = features[i].tolist()
                writer.writerow([data.ids[start + i],
                                 repr(float(predictions[i])),
                                 repr(float(data.targets[start + i]))]
                                + [repr(v) for v in row_features])
    return spec.output_path, int(dimension)


def validate_schema(path: str) -> list[str]:
    """Check an exported file against the table schema; returns the list of
    violations (empty when the file is well formed)."""
    violations: list[str] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        return [f"unreadable file: {exc}"]
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return ["empty file"]
        for required in ("prediction", "target"):
            if required not in header:
                violations.append(f"header missing {required!r}")
        numeric_positions = [i for i, name in enumerate(header) if name != "id"]
        width = len(header)
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            n_rows += 1
            if len(row) != width:
                violations.append(f"row {lineno}: expected {width} cells, "
                                  f"got {len(row)}")
                continue
            for pos in numeric_positions:
                try:
                    value = float(row[pos])
                except ValueError:
                    violations.append(f"row {lineno}: non-numeric cell "
                                      f"in column {header[pos]!r}")
                    continue
                if not math.isfinite(value):
                    violations.append(f"row {lineno}: non-finite value "
                                      f"in column {header[pos]!r}")
        if n_rows == 0:
            violations.append("no data rows")
    return violations
