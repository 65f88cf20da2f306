import csv
import json
import subprocess
import sys

import pytest

from feature_exporter import (ExportSpec, export_features, tokenize,
                              validate_schema)
from feature_exporter.cli import main as cli_main

WORDS = ("river", "stone", "cloud", "ember", "moss", "drift", "lantern")


def _write_raw(path, n, start=0):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "text", "x0", "x1", "x2", "target"])
        for i in range(start, start + n):
            text = " ".join(WORDS[(i + j) % len(WORDS)] for j in range(3))
            x = [(i % 5) * 0.2, ((i * 7) % 11) * 0.1, ((i * 3) % 13) * 0.05]
            target = 2.0 * x[0] - x[1] + 0.5 * x[2] + 0.01 * (i % 4)
            writer.writerow([f"r{i}", text, *x, target])
    return str(path)


def _spec(dataset, out, tags=("text", "numeric"), **kwargs):
    return ExportSpec(model_id="toy-two-branch", dataset_path=dataset,
                      layer_tags=tags, output_path=str(out), **kwargs)


def test_tokenizer_deterministic_and_nonempty():
    assert tokenize("river stone") == tokenize("river stone")
    assert tokenize("") == [0]
    assert all(0 <= t < 512 for t in tokenize("a b c d"))


def test_export_two_branch_widths(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 20)
    _, d_text = export_features(_spec(raw, tmp_path / "text.csv", ("text",)))
    _, d_num = export_features(_spec(raw, tmp_path / "num.csv", ("numeric",)))
    _, d_both = export_features(_spec(raw, tmp_path / "both.csv",
                                      ("text", "numeric")))
    assert d_text == 8
    assert d_num == 3
    assert d_both == 11  # concatenation of the two branch widths


def test_export_shape_contract(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 5)
    path, d = export_features(_spec(raw, tmp_path / "out.csv", ("text",)))
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "prediction", "target"] + [f"f{j}" for j in range(8)]
    assert len(rows) == 6
    assert all(len(r) == 11 for r in rows)


def test_export_is_stable_across_repeats(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 30)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    export_features(_spec(raw, a))
    export_features(_spec(raw, b))
    assert a.read_bytes() == b.read_bytes()


def test_export_batch_size_does_not_change_output(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 23)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    export_features(_spec(raw, a, batch_size=32))
    export_features(_spec(raw, b, batch_size=4))
    with open(a) as fa, open(b) as fb:
        ra, rb = list(csv.reader(fa)), list(csv.reader(fb))
    assert ra[0] == rb[0]
    for row_a, row_b in zip(ra[1:], rb[1:]):
        assert row_a[0] == row_b[0]
        for va, vb in zip(row_a[1:], row_b[1:]):
            assert float(va) == pytest.approx(float(vb), abs=1e-6)


def test_validate_schema_round_trip(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 15)
    path, _ = export_features(_spec(raw, tmp_path / "out.csv"))
    assert validate_schema(path) == []


def test_validate_schema_flags_broken_width(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 6)
    path, _ = export_features(_spec(raw, tmp_path / "out.csv", ("numeric",)))
    lines = open(path).read().splitlines()
    lines[3] = ",".join(lines[3].split(",")[:-1])  # drop a cell on row 3
    broken = tmp_path / "broken.csv"
    broken.write_text("\n".join(lines) + "\n")
    violations = validate_schema(str(broken))
    assert any("row 4" in v and "expected" in v for v in violations)


def test_validate_schema_flags_non_finite(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 6)
    path, _ = export_features(_spec(raw, tmp_path / "out.csv", ("numeric",)))
    text = open(path).read().replace("\n", "\n", 1)
    lines = text.splitlines()
    cells = lines[2].split(",")
    cells[3] = "nan"
    lines[2] = ",".join(cells)
    broken = tmp_path / "broken.csv"
    broken.write_text("\n".join(lines) + "\n")
    violations = validate_schema(str(broken))
    assert any("non-finite" in v for v in violations)


def test_unresolvable_layer_tag(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 4)
    with pytest.raises(ValueError, match="unresolvable layer tags"):
        export_features(_spec(raw, tmp_path / "out.csv", ("image",)))


def test_cli_export_and_validate(tmp_path):
    raw = _write_raw(tmp_path / "raw.csv", 10)
    out = tmp_path / "out.csv"
    assert cli_main(["export", "--dataset", raw, "--layer-tags", "text",
                     "--out", str(out)]) == 0
    assert cli_main(["validate", str(out)]) == 0
    (tmp_path / "junk.csv").write_text("prediction,target,f0\n1,2,oops\n")
    assert cli_main(["validate", str(tmp_path / "junk.csv")]) == 1


def test_round_trip_into_core_loader(tmp_path):
    from confreg import load_table

    raw = _write_raw(tmp_path / "raw.csv", 50)
    path, d = export_features(_spec(raw, tmp_path / "all.csv"))
    assert validate_schema(path) == []
    table, dropped = load_table(path)
    assert dropped == 0
    assert len(table) == 50
    assert table.dimension == d == 11


def test_full_pipeline_on_exported_features(tmp_path):
    # 50 instances split by role: 12 CP-train, 30 calibration, 8 test.
    # At confidence 0.8 a 30-row calibration set keeps intervals bounded.
    roles = (("cp_train", 12, 0), ("calibration", 30, 12), ("test", 8, 42))
    outputs = {}
    for role, n, start in roles:
        raw = _write_raw(tmp_path / f"raw_{role}.csv", n, start=start)
        out = tmp_path / f"{role}.csv"
        export_features(_spec(raw, out, role_tag=role))
        assert validate_schema(str(out)) == []
        outputs[role] = str(out)

    out_dir = tmp_path / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "confreg", "pipeline",
         "--train", outputs["cp_train"], "--cal", outputs["calibration"],
         "--test", outputs["test"], "--estimator", "norm_std", "--knn", "5",
         "--confidence", "0.8", "--out-dir", str(out_dir)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    metrics = json.loads((out_dir / "metrics.json").read_text())
    assert metrics["unbounded_count"] == 0
    assert metrics["mean_width"] is not None
    with open(out_dir / "intervals.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert all(r["lower"] not in ("-inf", "inf") and
               r["upper"] not in ("-inf", "inf") for r in rows)
