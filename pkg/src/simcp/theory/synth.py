"""
Synthetic grouped classification data.

C = G·K classes are split into G groups of K. For every sample a predicted
class ŷ is drawn uniformly; with probability ``in_group_mass`` the true label
is drawn uniformly from the group of ŷ (ŷ included), otherwise uniformly from
the remaining C - K classes. The softmax row depends on ŷ only: in-group
logits are shifted up, all logits carry i.i.d. Gaussian noise, and ŷ sits
``concentration`` above the largest other logit. Non-predicted classes of the
same group are therefore exchangeable and the label is uniform within the
in-group and out-of-group sets given the row.

With a non-zero ``margin_weight`` the in-group probability varies per sample:
``in_group_mass + margin_weight · (m - 0.5)`` clipped to [0.01, 0.99], where m
is the gap between the two largest softmax entries of the row.
"""
import logging
from dataclasses import dataclass

import numpy as np

from simcp.conf import stream
from simcp.data import ClassPartition, ConfigError, FeatureMatrix, \
    LabelVector, SoftmaxMatrix

MIN_IN_GROUP_PROB = 0.01
MAX_IN_GROUP_PROB = 0.99

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    n_groups: int = 10
    group_size: int = 5
    n_samples: int = 100_000
    in_group_mass: float = 0.9
    concentration: float = 2.0
    seed: int = 0
    in_group_shift: float = 2.0
    noise_scale: float = 1.0
    margin_weight: float = 0.0

    def __post_init__(self):
        if self.n_groups < 2:
            raise ConfigError(f"need at least 2 groups, got {self.n_groups}")
        if self.group_size < 1:
            raise ConfigError(f"group size must be >= 1, got "
                              f"{self.group_size}")
        if self.n_samples < 1:
            raise ConfigError(f"need at least one sample, got "
                              f"{self.n_samples}")
        if not 0.0 < self.in_group_mass < 1.0:
            raise ConfigError(f"in_group_mass must lie in (0, 1), got "
                              f"{self.in_group_mass}")
        if self.concentration < 0 or self.noise_scale < 0:
            raise ConfigError("concentration and noise_scale must be >= 0")

    @property
    def n_classes(self) -> int:
        return self.n_groups * self.group_size


@dataclass(frozen=True)
class SyntheticDataset:
    softmax: SoftmaxMatrix
    labels: LabelVector
    partition: ClassPartition
    config: SynthConfig
    #: per-sample probability that the label shares the group of ŷ
    in_group_prob: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.softmax.n_samples


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def in_group_probability(probs: np.ndarray,
                         config: SynthConfig) -> np.ndarray:
    """
    The generator's p_0(x) for every row of ``probs``.
    """
    if config.margin_weight == 0.0:
        return np.full(probs.shape[0], config.in_group_mass)
    top_two = -np.partition(-probs, 1, axis=1)[:, :2]
    margin = top_two[:, 0] - top_two[:, 1]
    return np.clip(config.in_group_mass
                   + config.margin_weight * (margin - 0.5),
                   MIN_IN_GROUP_PROB, MAX_IN_GROUP_PROB)


def generate(config: SynthConfig) -> SyntheticDataset:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed,
                                                        stream("synthetic")]))
    n, k, c = config.n_samples, config.group_size, config.n_classes
    group_of = np.arange(c) // k
    rows = np.arange(n)

    predicted = rng.integers(c, size=n)
    predicted_group = group_of[predicted]
    label_draw = rng.random(n)
    within = predicted_group * k + rng.integers(k, size=n)
    outside = rng.integers(c - k, size=n)
    # skip over the predicted group's block of classes
    outside = np.where(outside >= predicted_group * k, outside + k, outside)

    same_group = group_of[None, :] == predicted_group[:, None]
    logits = config.noise_scale * rng.standard_normal((n, c)) \
        + config.in_group_shift * same_group
    logits[rows, predicted] = -np.inf
    logits[rows, predicted] = logits.max(axis=1) + config.concentration
    probs = _softmax(logits)
    # keep ŷ the unique argmax even when the concentration underflows
    probs[rows, predicted] = np.maximum(probs[rows, predicted],
                                        np.nextafter(probs.max(axis=1), 1.0))
    probs /= probs.sum(axis=1, keepdims=True)

    in_group_prob = in_group_probability(probs, config)
    labels = np.where(label_draw < in_group_prob, within, outside)

    logger.debug("Generated %d samples over %d classes (mean p0=%g)", n, c,
                 in_group_prob.mean())
    return SyntheticDataset(softmax=SoftmaxMatrix(probs),
                            labels=LabelVector(labels, c),
                            partition=ClassPartition(group_of),
                            config=config,
                            in_group_prob=in_group_prob)


def generate_features(partition: ClassPartition,
                      samples_per_class: int = 20,
                      dim: int = 16,
                      group_spread: float = 3.0,
                      class_spread: float = 1.0,
                      noise_scale: float = 0.5,
                      seed: int = 0) -> FeatureMatrix:
    """
    Features whose class means cluster around one center per group, so the
    cosine similarity of centered class means recovers the partition.
    """
    if samples_per_class < 1 or dim < 1:
        raise ConfigError("samples_per_class and dim must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed,
                                                        stream("features")]))
    centers = group_spread * rng.standard_normal((partition.n_groups, dim))
    class_means = centers[partition.group_of] \
        + class_spread * rng.standard_normal((partition.n_classes, dim))
    labels = np.repeat(np.arange(partition.n_classes), samples_per_class)
    values = class_means[labels] \
        + noise_scale * rng.standard_normal((labels.shape[0], dim))
    return FeatureMatrix(values, LabelVector(labels, partition.n_classes))
