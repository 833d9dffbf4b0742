import math

import numpy as np
import pytest

from simcp.data import CalibratedThreshold, CalibrationConfig, \
    ClassPartition, ConfigError, DataError, FeatureMatrix, LabelVector, \
    PredictionSet, PredictionSets, SimilarityMatrix, SoftmaxMatrix, \
    quantile_rank, validate_softmax


def test_validate_softmax_accepts_stochastic_rows():
    softmax = validate_softmax(np.array([[0.5, 0.5], [0.1, 0.9]]))
    assert softmax.n_samples == 2
    assert softmax.n_classes == 2


def test_validate_softmax_rejects_bad_row_sum():
    with pytest.raises(DataError, match="row 1"):
        validate_softmax(np.array([[0.5, 0.5], [0.5, 0.6]]))


def test_validate_softmax_renormalizes_within_tolerance():
    softmax = validate_softmax(np.array([[0.3333333, 0.6666666]]))
    assert abs(softmax.values.sum() - 1.0) <= 1e-12


def test_validate_softmax_is_idempotent():
    once = validate_softmax(np.array([[0.3333333, 0.6666666],
                                      [0.2, 0.8]]))
    twice = validate_softmax(once)
    np.testing.assert_array_equal(once.values, twice.values)


def test_softmax_rejects_non_finite_and_negative():
    with pytest.raises(DataError):
        validate_softmax(np.array([[np.nan, 1.0]]))
    with pytest.raises(DataError):
        SoftmaxMatrix(np.array([[-0.1, 1.1]]))


def test_softmax_is_read_only(small_softmax):
    with pytest.raises(ValueError):
        small_softmax.values[0, 0] = 1.0


def test_predicted_class_ties_go_to_lower_index():
    softmax = SoftmaxMatrix(np.array([[0.4, 0.4, 0.2]]))
    assert softmax.predicted_classes()[0] == 0


def test_label_vector_bounds():
    with pytest.raises(DataError, match="row 1"):
        LabelVector(np.array([0, 3]), n_classes=3)
    with pytest.raises(DataError):
        LabelVector(np.array([-1, 0]))
    assert len(LabelVector(np.array([0, 2]), 3)) == 2


def test_partition_groups():
    partition = ClassPartition(np.array([0, 0, 1]))
    assert partition.n_classes == 3
    assert partition.n_groups == 2
    np.testing.assert_array_equal(partition.group_sizes(), [2, 1])
    np.testing.assert_array_equal(partition.one_hot(),
                                  [[1, 0], [1, 0], [0, 1]])


def test_partition_with_empty_group_is_rejected():
    with pytest.raises(DataError):
        ClassPartition(np.array([0, 2, 2]))


def test_similarity_matrix_checks():
    SimilarityMatrix(np.eye(3))
    with pytest.raises(DataError):
        SimilarityMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(DataError):
        SimilarityMatrix(np.array([[1.0, 1.5], [1.5, 1.0]]))


def test_feature_matrix_alignment():
    with pytest.raises(DataError):
        FeatureMatrix(np.zeros((3, 2)), LabelVector(np.array([0, 1])))


@pytest.mark.parametrize("n, alpha, k", [(10, 0.5, 6), (10, 0.05, 11),
                                         (1, 0.3, 2), (99, 0.1, 90)])
def test_quantile_rank(n, alpha, k):
    assert quantile_rank(n, alpha) == k


def test_threshold_small_n_must_be_infinite():
    assert CalibratedThreshold(math.inf, 0.05, 10).is_vacuous
    with pytest.raises(DataError):
        CalibratedThreshold(0.9, 0.05, 10)
    with pytest.raises(ConfigError):
        CalibratedThreshold(0.5, 1.5, 10)


def test_prediction_set_is_sorted_and_counts_superclasses():
    partition = ClassPartition(np.repeat([0, 1], 5))
    prediction = PredictionSet([0, 1, 5], predicted_class=0)
    assert prediction.size == 3
    assert prediction.superclasses(partition) == [0, 1]
    assert 5 in prediction
    with pytest.raises(DataError):
        PredictionSet([1, 0], predicted_class=0)


def test_prediction_sets_round_trip_through_membership():
    sets = [PredictionSet([0], 0), PredictionSet([], 1),
            PredictionSet([0, 2], 2)]
    batch = PredictionSets.from_sets(sets, n_classes=3)
    np.testing.assert_array_equal(batch.sizes, [1, 0, 2])
    assert list(batch) == sets
    np.testing.assert_array_equal(
        batch.group_membership(ClassPartition(np.array([0, 0, 1]))),
        [[True, False], [False, False], [True, True]])


@pytest.mark.parametrize("kwargs", [{"alpha": 0.0}, {"alpha": 1.0},
                                    {"alpha": 0.1, "lambda_": -0.5},
                                    {"alpha": 0.1, "lambda_": math.nan}])
def test_calibration_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        CalibrationConfig(**kwargs)


def test_calibration_config_defaults():
    config = CalibrationConfig(alpha=0.1)
    assert (config.seed, config.lambda_) == (0, 0.0)
