"""
Shared fixtures: small hand-made inputs and cached synthetic datasets.

Synthetic datasets are session scoped; generating them is deterministic, so
sharing them between tests does not couple the tests.
"""
import numpy as np
import pytest

from simcp.data import ClassPartition, LabelVector, SoftmaxMatrix
from simcp.theory.synth import SynthConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_softmax():
    return SoftmaxMatrix(np.array([[0.6, 0.3, 0.1],
                                   [0.2, 0.5, 0.3],
                                   [0.1, 0.1, 0.8],
                                   [0.4, 0.35, 0.25]]))


@pytest.fixture
def three_class_partition():
    return ClassPartition(np.array([0, 0, 1]))


@pytest.fixture(scope="session")
def favorable():
    """
    10 groups of 5 classes, 90% of the labels share the predicted group.
    """
    return generate(SynthConfig(n_groups=10, group_size=5, n_samples=20_000,
                                in_group_mass=0.9, seed=0))


@pytest.fixture(scope="session")
def adversarial():
    """
    2 groups of 5 classes, only 5% of the labels share the predicted group.
    """
    return generate(SynthConfig(n_groups=2, group_size=5, n_samples=20_000,
                                in_group_mass=0.05, seed=0))


@pytest.fixture(scope="session")
def coverage_data():
    return generate(SynthConfig(n_groups=5, group_size=4, n_samples=10_000,
                                in_group_mass=0.8, seed=7))


def random_softmax(rng: np.random.Generator,
                   n: int,
                   c: int) -> SoftmaxMatrix:
    logits = rng.normal(size=(n, c)) * 2.0
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    return SoftmaxMatrix(probs / probs.sum(axis=1, keepdims=True))


def random_labels(rng: np.random.Generator,
                  n: int,
                  c: int) -> LabelVector:
    return LabelVector(rng.integers(c, size=n), c)
