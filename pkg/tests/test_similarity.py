import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simcp.data import ClassPartition, ConfigError, DataError, FeatureMatrix, \
    LabelVector, SimilarityMatrix
from simcp.similarity import ClassMeans, PenaltySource, class_means, \
    cosine_similarity_matrix, penalty, similarity_from_features


def test_class_means_by_hand():
    features = FeatureMatrix(np.array([[0.0, 0.0], [0.0, 4.0], [2.0, 0.0]]),
                             LabelVector(np.array([0, 1, 0])))
    means = class_means(features)
    np.testing.assert_allclose(means.means, [[1.0, 0.0], [0.0, 4.0]])
    np.testing.assert_allclose(means.global_mean, [0.5, 2.0])
    np.testing.assert_array_equal(means.counts, [2, 1])


def test_class_means_are_order_invariant(rng):
    values = rng.normal(size=(30, 4))
    labels = np.arange(30) % 3
    order = rng.permutation(30)
    first = class_means(FeatureMatrix(values, LabelVector(labels)))
    second = class_means(FeatureMatrix(values[order],
                                       LabelVector(labels[order])))
    np.testing.assert_allclose(first.means, second.means, atol=1e-12)


def test_single_sample_per_class():
    values = np.array([[1.0, 2.0], [3.0, 5.0]])
    means = class_means(FeatureMatrix(values, LabelVector(np.array([0, 1]))))
    np.testing.assert_array_equal(means.means, values)


def test_empty_class_is_named():
    features = FeatureMatrix(np.ones((2, 2)), LabelVector(np.array([0, 2])))
    with pytest.raises(DataError, match="class 1"):
        class_means(features, n_classes=3)


def _means(*rows) -> ClassMeans:
    means = np.array(rows, dtype=np.float64)
    return ClassMeans(means=means, global_mean=np.zeros(means.shape[1]),
                      counts=np.ones(means.shape[0], dtype=np.int64))


def test_orthogonal_and_colinear_means():
    assert cosine_similarity_matrix(_means([1, 0], [0, 1])).values[0, 1] \
        == pytest.approx(0.0, abs=1e-12)
    assert cosine_similarity_matrix(_means([1, 0], [2, 0])).values[0, 1] \
        == pytest.approx(1.0, abs=1e-12)


def test_degenerate_mean_is_only_similar_to_itself():
    matrix = cosine_similarity_matrix(_means([0, 0], [1, 0], [0, 1])).values
    np.testing.assert_array_equal(matrix[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(np.diag(matrix), [1.0, 1.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
       n_classes=st.integers(min_value=2, max_value=8),
       dim=st.integers(min_value=1, max_value=6))
def test_matches_pairwise_dot_products(seed, n_classes, dim):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), 3)
    features = FeatureMatrix(rng.normal(size=(labels.shape[0], dim)),
                             LabelVector(labels))
    matrix = similarity_from_features(features).values

    means = np.array([features.values[labels == c].mean(axis=0)
                      for c in range(n_classes)])
    centered = means - means.mean(axis=0)
    for i in range(n_classes):
        for j in range(n_classes):
            a, b = centered[i], centered[j]
            norm = np.linalg.norm(a) * np.linalg.norm(b)
            expected = 1.0 if i == j else (
                0.0 if min(np.linalg.norm(a), np.linalg.norm(b)) <= 1e-12
                else float(np.clip(a @ b / norm, -1.0, 1.0)))
            assert matrix[i, j] == pytest.approx(expected, abs=1e-12)
    np.testing.assert_array_equal(matrix, matrix.T)


def test_binary_penalty():
    source = PenaltySource.binary(ClassPartition(np.array([0, 0, 1])))
    assert penalty(source, 1, 0) == 0.0
    assert penalty(source, 2, 0) == 1.0
    np.testing.assert_array_equal(source.distance_matrix(3),
                                  [[0, 0, 1], [0, 0, 1], [1, 1, 0]])


def test_soft_penalty_with_identity_is_diagonal():
    soft = PenaltySource.soft(SimilarityMatrix(np.eye(4)))
    diagonal = PenaltySource.diagonal()
    for y in range(4):
        for y_hat in range(4):
            assert penalty(soft, y, y_hat) == penalty(diagonal, y, y_hat) \
                == float(y != y_hat)
    np.testing.assert_array_equal(soft.distance_matrix(4),
                                  diagonal.distance_matrix(4))


def test_soft_penalty_is_not_clipped():
    matrix = SimilarityMatrix(np.array([[1.0, -0.5], [-0.5, 1.0]]))
    assert penalty(PenaltySource.soft(matrix), 0, 1) == pytest.approx(1.5)


def test_penalty_source_needs_its_input():
    with pytest.raises(ConfigError):
        PenaltySource.binary(None)
    source = PenaltySource.binary(ClassPartition(np.array([0, 1])))
    with pytest.raises(DataError):
        source.distance_matrix(3)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
       scale=st.floats(min_value=0.01, max_value=100.0))
def test_similarity_ignores_feature_scale(seed, scale):
    rng = np.random.default_rng(seed)
    labels = LabelVector(np.repeat(np.arange(5), 4))
    values = rng.normal(size=(20, 3))
    plain = similarity_from_features(FeatureMatrix(values, labels)).values
    scaled = similarity_from_features(
        FeatureMatrix(values * scale, labels)).values
    np.testing.assert_allclose(scaled, plain, rtol=0, atol=1e-9)


def _sources():
    similarity = SimilarityMatrix(np.array([[1.0, 0.4, -0.2],
                                            [0.4, 1.0, 0.7],
                                            [-0.2, 0.7, 1.0]]))
    return [PenaltySource.binary(ClassPartition(np.array([0, 1, 0]))),
            PenaltySource.soft(similarity),
            PenaltySource.diagonal()]


@pytest.mark.parametrize("source", _sources(), ids=["binary", "soft", "diag"])
def test_penalties_vanish_on_the_diagonal_and_are_symmetric(source):
    for y in range(3):
        assert penalty(source, y, y) == 0.0
        for y_hat in range(3):
            assert penalty(source, y, y_hat) == penalty(source, y_hat, y)
    distances = source.distance_matrix(3)
    np.testing.assert_array_equal(np.diag(distances), 0.0)
    np.testing.assert_array_equal(distances, distances.T)
