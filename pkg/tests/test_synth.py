import numpy as np
import pytest

from simcp.data import ConfigError, validate_softmax
from simcp.similarity import similarity_from_features
from simcp.theory.synth import SynthConfig, generate, generate_features
from simcp.theory.verify import in_group_rates


@pytest.mark.parametrize("p0", [0.05, 0.5, 0.9])
def test_in_group_rate_matches_config(p0):
    data = generate(SynthConfig(n_samples=100_000, in_group_mass=p0, seed=2))
    p0_hat, n0_bar, n1_bar = in_group_rates(data.softmax.values,
                                            data.labels.labels,
                                            data.partition)
    assert abs(p0_hat - p0) <= 0.01
    assert n0_bar == 5.0 and n1_bar == 45.0


def test_partition_layout():
    data = generate(SynthConfig(n_groups=4, group_size=3, n_samples=10))
    np.testing.assert_array_equal(data.partition.group_of,
                                  np.repeat(np.arange(4), 3))
    assert data.softmax.n_classes == 12


def test_rows_are_valid_with_unique_argmax(favorable):
    probs = favorable.softmax.values
    validate_softmax(probs)
    top_two = np.sort(probs, axis=1)[:, -2:]
    assert np.all(top_two[:, 1] > top_two[:, 0])


def test_high_concentration_is_nearly_one_hot():
    data = generate(SynthConfig(n_groups=2, group_size=1, n_samples=500,
                                in_group_mass=0.5, concentration=50.0))
    assert np.all(data.softmax.values.max(axis=1) > 1 - 1e-12)


def test_generation_is_deterministic():
    config = SynthConfig(n_samples=1000, seed=9)
    first, second = generate(config), generate(config)
    np.testing.assert_array_equal(first.softmax.values, second.softmax.values)
    np.testing.assert_array_equal(first.labels.labels, second.labels.labels)


@pytest.mark.parametrize("kwargs", [{"n_groups": 1}, {"group_size": 0},
                                    {"in_group_mass": 1.0},
                                    {"concentration": -1.0}])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)


def test_features_recover_groups(favorable):
    similarity = similarity_from_features(
        generate_features(favorable.partition)).values
    same = favorable.partition.group_of[:, None] \
        == favorable.partition.group_of[None, :]
    off_diagonal = ~np.eye(same.shape[0], dtype=bool)
    assert similarity[same & off_diagonal].mean() \
        > similarity[~same].mean() + 0.3


def test_constant_in_group_probability_by_default():
    data = generate(SynthConfig(n_samples=1000, in_group_mass=0.7, seed=4))
    np.testing.assert_array_equal(data.in_group_prob, np.full(1000, 0.7))


def test_margin_weight_makes_in_group_rate_follow_the_row():
    data = generate(SynthConfig(n_samples=50_000, in_group_mass=0.5,
                                margin_weight=2.0, seed=3))
    p0_x = data.in_group_prob
    assert np.all((p0_x >= 0.01) & (p0_x <= 0.99))
    group_of = data.partition.group_of
    predicted_group = group_of[data.softmax.predicted_classes()]
    label_in_group = group_of[data.labels.labels] == predicted_group
    high = p0_x > np.median(p0_x)
    assert p0_x[high].mean() - p0_x[~high].mean() > 0.05
    for rows in (high, ~high):
        assert abs(label_in_group[rows].mean() - p0_x[rows].mean()) <= 0.015


def test_margin_weight_leaves_rows_unchanged():
    plain = generate(SynthConfig(n_samples=2000, seed=5))
    weighted = generate(SynthConfig(n_samples=2000, seed=5,
                                    margin_weight=1.0))
    np.testing.assert_array_equal(plain.softmax.values,
                                  weighted.softmax.values)
