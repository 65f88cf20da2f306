import math
import random

import numpy as np
import pytest

from confreg import (DataError, InfeasibleError, SynthSpec, TableSchema,
                     conformal_quantile, load_table, split_calibration,
                     synth_heteroscedastic, write_table)
from confreg.dataset import PredictionTable


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    return str(path)


def test_load_clean_csv(tmp_path):
    path = _write_csv(tmp_path / "t.csv",
                      ["id", "prediction", "target", "f0", "f1"],
                      [[0, 1.5, 2.0, 0.1, 0.2],
                       [1, -3.0, -2.5, 1.0, "2e-3"],
                       [2, 0.0, 0.0, -1.0, 4.5]])
    table, dropped = load_table(path)
    assert len(table) == 3
    assert dropped == 0
    assert table.dimension == 2
    assert table.ids == ["0", "1", "2"]
    assert table.features[1, 1] == pytest.approx(2e-3)


def test_load_without_id_column_assigns_row_indices(tmp_path):
    path = _write_csv(tmp_path / "t.csv", ["prediction", "target", "x"],
                      [[1, 2, 3], ["nan", 2, 3], [4, 5, 6]])
    table, dropped = load_table(path)
    assert dropped == 1
    # ids number the surviving rows
    assert table.ids == ["0", "1"]
    assert table.predictions.tolist() == [1.0, 4.0]


def test_load_large_file_nan_reduction(tmp_path):
    # 1288 rows of which 1046 carry a NaN token somewhere -> 242 survive.
    tokens = ["", "NaN", "nan", "NAN"]
    rows = []
    for i in range(1288):
        row = [i, 0.5 * i, 0.25 * i, i % 7, i % 11]
        if i < 1046:
            row[3 + (i % 2)] = tokens[i % len(tokens)]
        rows.append(row)
    path = _write_csv(tmp_path / "big.csv",
                      ["id", "prediction", "target", "f0", "f1"], rows)
    table, dropped = load_table(path)
    assert len(table) == 242
    assert dropped == 1046
    for arr in (table.features, table.predictions, table.targets):
        assert np.all(np.isfinite(arr))


def test_load_all_nan_rows_is_empty_table_error(tmp_path):
    path = _write_csv(tmp_path / "t.csv", ["prediction", "target", "f0"],
                      [[1, "nan", 0], ["", 2, 0]])
    with pytest.raises(DataError, match="empty table"):
        load_table(path)


def test_load_fail_policy_aborts_on_nan(tmp_path):
    path = _write_csv(tmp_path / "t.csv", ["prediction", "target", "f0"],
                      [[1, 2, 3], [1, "NaN", 3]])
    with pytest.raises(DataError, match="NaN under fail policy"):
        load_table(path, nan_policy="fail")


def test_load_infinite_value_follows_nan_policy(tmp_path):
    path = _write_csv(tmp_path / "t.csv", ["prediction", "target", "f0"],
                      [[1, 2, 3], [1, "1e999", 3]])
    table, dropped = load_table(path)
    assert len(table) == 1 and dropped == 1


def test_load_non_numeric_cell_is_error_even_with_drop(tmp_path):
    path = _write_csv(tmp_path / "t.csv", ["prediction", "target", "f0"],
                      [[1, 2, "abc"]])
    with pytest.raises(DataError, match="non-numeric"):
        load_table(path)


def test_load_missing_file_and_missing_columns(tmp_path):
    with pytest.raises(DataError, match="cannot open"):
        load_table(str(tmp_path / "absent.csv"))
    path = _write_csv(tmp_path / "t.csv", ["prediction", "f0"], [[1, 2]])
    with pytest.raises(DataError, match="missing required column"):
        load_table(path)


def test_explicit_feature_mapping(tmp_path):
    path = _write_csv(tmp_path / "t.csv",
                      ["prediction", "target", "a", "b", "c"],
                      [[1, 2, 10, 20, 30]])
    table, _ = load_table(path, TableSchema(feature_columns=("c", "a")))
    assert table.features.tolist() == [[30.0, 10.0]]


def test_write_load_round_trip(tmp_path):
    spec = SynthSpec(n=40, d=3, signal="mean", noise_scale="unit", seed=5)
    table = synth_heteroscedastic(spec)
    path = str(tmp_path / "round.csv")
    write_table(table, path)
    loaded, dropped = load_table(path)
    assert dropped == 0
    assert loaded.ids == table.ids
    np.testing.assert_array_equal(loaded.features, table.features)
    np.testing.assert_array_equal(loaded.predictions, table.predictions)
    np.testing.assert_array_equal(loaded.targets, table.targets)


def _toy_table(n, seed=0):
    rng = np.random.default_rng(seed)
    return PredictionTable(ids=[str(i) for i in range(n)],
                           features=rng.normal(size=(n, 2)),
                           predictions=rng.normal(size=n),
                           targets=rng.normal(size=n))


def test_split_sizes_and_disjoint_ids():
    table = _toy_table(10)
    train, cal = split_calibration(table, 3, seed=7)
    assert (len(train), len(cal)) == (7, 3)
    assert set(train.ids).isdisjoint(cal.ids)
    assert sorted(train.ids + cal.ids) == sorted(table.ids)


def test_split_is_deterministic():
    table = _toy_table(50)
    first = split_calibration(table, 20, seed=3)
    second = split_calibration(table, 20, seed=3)
    for a, b in zip(first, second):
        assert a.ids == b.ids
        np.testing.assert_array_equal(a.features, b.features)
    other = split_calibration(table, 20, seed=4)
    assert other[1].ids != first[1].ids


def test_split_large_table_counts():
    table = _toy_table(39676)
    train, cal = split_calibration(table, 3968, seed=0)
    assert (len(train), len(cal)) == (35708, 3968)


def test_split_n_cal_out_of_range():
    table = _toy_table(10)
    for bad in (0, 10, 11):
        with pytest.raises(InfeasibleError):
            split_calibration(table, bad, seed=0)


def test_synth_zero_noise_targets_equal_predictions():
    spec = SynthSpec(n=100, d=2, signal="mean", noise_scale="zero", seed=1)
    table = synth_heteroscedastic(spec)
    np.testing.assert_array_equal(table.targets, table.predictions)
    assert np.all(table.residuals == 0.0)


def test_synth_target_mean_matches_independent_monte_carlo():
    # Independent oracle with the stdlib generator: the 3/sqrt(n) bound
    # holds for a plain N(0,1) sample of the same size.
    n = 10000
    gen = random.Random(424242)
    oracle_mean = sum(gen.gauss(0.0, 1.0) for _ in range(n)) / n
    bound = 3.0 / math.sqrt(n)
    assert abs(oracle_mean) < bound
    table = synth_heteroscedastic(SynthSpec(n=n, d=1, signal="zero",
                                            noise_scale="unit", seed=9))
    assert abs(float(table.targets.mean())) < bound


def test_synth_deterministic():
    spec = SynthSpec(n=64, d=3, signal="sine", noise_scale="one_plus_abs_x0",
                     seed=21)
    a = synth_heteroscedastic(spec)
    b = synth_heteroscedastic(spec)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.targets, b.targets)
    assert a.ids == b.ids


def test_synth_unknown_function_id():
    with pytest.raises(ValueError, match="unknown signal"):
        SynthSpec(n=5, d=1, signal="mystery", noise_scale="unit", seed=0)
    with pytest.raises(ValueError, match="unknown noise_scale"):
        SynthSpec(n=5, d=1, signal="zero", noise_scale="mystery", seed=0)


def test_synth_prediction_bias_shifts_predictions():
    base = synth_heteroscedastic(SynthSpec(n=30, d=1, signal="mean",
                                           noise_scale="unit", seed=2))
    biased = synth_heteroscedastic(SynthSpec(n=30, d=1, signal="mean",
                                             noise_scale="unit", seed=2,
                                             prediction_bias=1.5))
    np.testing.assert_allclose(biased.predictions, base.predictions + 1.5)
    np.testing.assert_array_equal(biased.targets, base.targets)


def test_row_permutation_leaves_conformal_quantile_unchanged():
    # Exchangeability by construction: the calibration quantile only sees
    # the score multiset, so shuffling the table cannot move it.
    table = synth_heteroscedastic(SynthSpec(n=200, d=2, signal="mean",
                                            noise_scale="unit", seed=11))
    rng = np.random.default_rng(0)
    shuffled = table.take(rng.permutation(len(table)))
    for confidence in (0.5, 0.9, 0.95):
        assert conformal_quantile(table.residuals, confidence) == \
            conformal_quantile(shuffled.residuals, confidence)


def test_table_rejects_duplicate_ids_and_nonfinite():
    with pytest.raises(DataError, match="not unique"):
        PredictionTable(ids=["a", "a"], features=np.zeros((2, 1)),
                        predictions=np.zeros(2), targets=np.zeros(2))
    with pytest.raises(DataError, match="non-finite"):
        PredictionTable(ids=["a", "b"], features=np.zeros((2, 1)),
                        predictions=np.array([0.0, math.nan]),
                        targets=np.zeros(2))
