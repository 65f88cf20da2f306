"""Dump pre-fusion model activations into the conformal toolkit's CSV schema."""

from .export import ExportSpec, export_features, read_raw_dataset, validate_schema
from .model import ToyTwoBranchModel, build_model, tokenize

__all__ = [
    "ExportSpec", "ToyTwoBranchModel", "build_model", "export_features",
    "read_raw_dataset", "tokenize", "validate_schema",
]
