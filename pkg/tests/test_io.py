import math
import struct

import numpy as np
import pytest

from simcp import io
from simcp.data import CalibratedThreshold, ClassPartition, DataError, \
    FormatError, LabelVector, PredictionSet, PredictionSets


def test_load_csv_matrix(tmp_path):
    path = tmp_path / "softmax.csv"
    path.write_text("0.7,0.2,0.1\n0.1,0.1,0.8\n")
    values = io.load_matrix(path)
    assert values.shape == (2, 3)
    np.testing.assert_array_equal(values[1], [0.1, 0.1, 0.8])


def test_ragged_csv_is_a_format_error(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("0.7,0.2,0.1\n0.1,0.9\n")
    with pytest.raises(FormatError):
        io.load_matrix(path)


def test_non_finite_csv_is_a_data_error(tmp_path):
    path = tmp_path / "nan.csv"
    path.write_text("0.5,nan\n")
    with pytest.raises(DataError, match="row 0"):
        io.load_matrix(path)


def test_binary_zero_rows_rejected(tmp_path):
    path = tmp_path / "empty.cpm"
    path.write_bytes(struct.pack(io.HEADER_PATTERN, io.MAGIC, 0, 3, 1))
    with pytest.raises(FormatError, match="degenerate"):
        io.load_matrix(path)


def test_binary_bad_magic_and_short_payload(tmp_path):
    path = tmp_path / "bad.cpm"
    path.write_bytes(struct.pack(io.HEADER_PATTERN, b"XXXX", 1, 1, 1)
                     + b"\0" * 8)
    with pytest.raises(FormatError, match="magic"):
        io.load_matrix(path)
    path.write_bytes(struct.pack(io.HEADER_PATTERN, io.MAGIC, 2, 2, 1)
                     + b"\0" * 8)
    with pytest.raises(FormatError, match="payload"):
        io.load_matrix(path)


def test_binary_layout_and_round_trip(tmp_path, rng):
    matrix = rng.random((5, 4))
    path = io.write_matrix(tmp_path / "m.cpm", matrix)
    raw = path.read_bytes()
    assert raw[:4] == b"CPM1"
    assert struct.unpack("<II", raw[4:12]) == (5, 4)
    assert raw[12] == 1
    np.testing.assert_array_equal(io.load_matrix(path), matrix)
    io.write_matrix(tmp_path / "again.cpm", io.load_matrix(path))
    assert (tmp_path / "again.cpm").read_bytes() == raw


def test_float32_binary(tmp_path, rng):
    matrix = rng.random((3, 2)).astype(np.float32)
    path = io.write_matrix(tmp_path / "m32.cpm", matrix, dtype="<f4")
    assert path.read_bytes()[12] == 0
    np.testing.assert_array_equal(io.load_matrix(path),
                                  matrix.astype(np.float64))


def test_csv_round_trip_within_precision(tmp_path, rng):
    matrix = rng.random((6, 3))
    path = io.write_matrix(tmp_path / "m.csv", matrix)
    np.testing.assert_allclose(io.load_matrix(path), matrix, rtol=0,
                               atol=1e-12)


def test_load_partition(tmp_path):
    path = tmp_path / "partition.csv"
    path.write_text("0,0\n1,0\n2,1\n")
    partition = io.load_partition(path)
    np.testing.assert_array_equal(partition.group_of, [0, 0, 1])
    assert partition.n_groups == 2


def test_partition_duplicate_and_missing_classes(tmp_path):
    path = tmp_path / "partition.csv"
    path.write_text("0,0\n0,1\n")
    with pytest.raises(FormatError, match="more than once"):
        io.load_partition(path)
    path.write_text("0,0\n2,1\n")
    with pytest.raises(FormatError, match="missing"):
        io.load_partition(path)


def test_hundred_class_partition(tmp_path):
    partition = ClassPartition(np.arange(100) // 5)
    path = io.write_partition(tmp_path / "p.csv", partition)
    loaded = io.load_partition(path, n_classes=100)
    assert loaded.n_groups == 20
    np.testing.assert_array_equal(loaded.group_sizes(), np.full(20, 5))


def test_labels_round_trip_and_errors(tmp_path):
    path = io.write_labels(tmp_path / "labels.txt",
                           LabelVector(np.array([2, 0, 1])))
    np.testing.assert_array_equal(io.load_labels(path).labels, [2, 0, 1])
    with pytest.raises(DataError):
        io.load_labels(path, n_classes=2)
    (tmp_path / "bad.txt").write_text("0\nx\n")
    with pytest.raises(FormatError):
        io.load_labels(tmp_path / "bad.txt")


def test_features_need_matching_labels(tmp_path):
    io.write_matrix(tmp_path / "f.cpm", np.ones((3, 2)))
    io.write_labels(tmp_path / "l.txt", np.array([0, 1]))
    with pytest.raises(FormatError):
        io.load_features(tmp_path / "f.cpm", tmp_path / "l.txt")


def test_threshold_file_keeps_infinity_and_metadata(tmp_path):
    threshold = CalibratedThreshold(math.inf, 0.05, 10, lambda_=0.5)
    path = io.write_threshold(tmp_path / "threshold.csv", threshold,
                              score_kind="raps", penalty_kind="ma", seed=3,
                              k_reg=2, lambda_raps=0.1)
    loaded, metadata = io.load_threshold(path)
    assert loaded == threshold
    assert metadata["score_kind"] == "raps"
    assert int(metadata["k_reg"]) == 2
    assert path.read_text().splitlines()[0].startswith(
        "q_hat,alpha,n_cal,lambda,score_kind,penalty_kind,seed")


def test_sets_file(tmp_path):
    sets = PredictionSets.from_sets([PredictionSet([0, 1], 0),
                                     PredictionSet([], 2),
                                     PredictionSet([3], 3)], n_classes=5)
    path = io.write_sets(tmp_path / "sets.csv", sets)
    loaded = io.load_sets(path, n_classes=5)
    np.testing.assert_array_equal(loaded.membership, sets.membership)
    np.testing.assert_array_equal(loaded.predicted, sets.predicted)
    assert io.load_sets(path).n_classes == 4


@pytest.mark.parametrize("name", ["absent.cpm", "absent.csv"])
def test_missing_matrix_is_a_format_error(tmp_path, name):
    with pytest.raises(FormatError, match="no such file"):
        io.load_matrix(tmp_path / name)


def test_missing_label_partition_and_threshold_files(tmp_path):
    for load in (io.load_labels, io.load_partition, io.load_threshold,
                 io.load_sets):
        with pytest.raises(FormatError, match="no such file"):
            load(tmp_path / "absent.csv")


def test_undecodable_csv_is_a_format_error(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"\xff\xfe\x00\x81,\x90\n")
    with pytest.raises(FormatError, match="UTF-8"):
        io.load_matrix(path)
    with pytest.raises(FormatError, match="UTF-8"):
        io.load_partition(path)


def test_partition_with_extra_column(tmp_path):
    path = tmp_path / "partition.csv"
    path.write_text("0,0,7\n1,0,7\n2,1,7\n")
    with pytest.raises(FormatError, match="3 columns"):
        io.load_partition(path)


def test_random_matrices_survive_write_and_load(tmp_path, rng):
    for i in range(100):
        rows, cols = rng.integers(1, 40, size=2)
        matrix = rng.normal(size=(rows, cols)) * 10.0 ** rng.integers(-6, 6)
        path = io.write_matrix(tmp_path / f"m{i}.cpm", matrix)
        np.testing.assert_array_equal(io.load_matrix(path), matrix)
