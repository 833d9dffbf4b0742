"""
Penalty sources: the binary group-mismatch distance from a class partition,
the soft distance 1 - M from a cosine-similarity matrix of centered class
means, and the identity ablation that penalizes every non-predicted class.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from sklearn import preprocessing

from simcp.data import ClassPartition, ConfigError, DataError, FeatureMatrix, \
    SimilarityMatrix

DEGENERATE_NORM = 1e-12

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassMeans:
    means: np.ndarray
    global_mean: np.ndarray
    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]


def class_means(features: FeatureMatrix,
                n_classes: Optional[int] = None) -> ClassMeans:
    """
    Per-class feature means and their unweighted average. The global mean is
    the mean of the class means, not of the samples, so class imbalance does
    not move it.

    :raises DataError: when a class in [0, C) has no feature rows
    """
    labels = features.labels.labels
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    df = pd.DataFrame(features.values)
    grouped = df.groupby(labels)
    counts = grouped.size().reindex(range(n_classes), fill_value=0)
    if (counts == 0).any():
        empty = int(counts.index[counts.to_numpy() == 0][0])
        raise DataError(f"class {empty} has no feature rows")
    means = grouped.mean().reindex(range(n_classes)).to_numpy()
    return ClassMeans(means=means,
                      global_mean=means.mean(axis=0),
                      counts=counts.to_numpy())


def cosine_similarity_matrix(means: ClassMeans) -> SimilarityMatrix:
    """
    Cosine similarity of the centered class means. A class whose centered
    mean has norm at most ``DEGENERATE_NORM`` is similar only to itself.
    """
    centered = means.means - means.global_mean
    norms = np.linalg.norm(centered, axis=1)
    degenerate = norms <= DEGENERATE_NORM
    if degenerate.any():
        logger.warning("Classes %s have a degenerate centered mean",
                       np.flatnonzero(degenerate).tolist())
    unit = preprocessing.normalize(centered)
    unit[degenerate] = 0.0
    values = unit @ unit.T
    values = np.clip((values + values.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(values)


def similarity_from_features(features: FeatureMatrix,
                             n_classes: Optional[int] = None) \
        -> SimilarityMatrix:
    return cosine_similarity_matrix(class_means(features, n_classes))


class SourceKind(Enum):
    MA_BINARY = "ma_binary"
    MS_SOFT = "ms_soft"
    MA_DIAG = "ma_diag"


@dataclass(frozen=True)
class PenaltySource:
    kind: SourceKind
    partition: Optional[ClassPartition] = None
    matrix: Optional[SimilarityMatrix] = None

    def __post_init__(self):
        if self.kind is SourceKind.MA_BINARY and self.partition is None:
            raise ConfigError("the binary penalty needs a class partition")
        if self.kind is SourceKind.MS_SOFT and self.matrix is None:
            raise ConfigError("the soft penalty needs a similarity matrix")

    @staticmethod
    def binary(partition: ClassPartition) -> 'PenaltySource':
        return PenaltySource(SourceKind.MA_BINARY, partition=partition)

    @staticmethod
    def soft(matrix: SimilarityMatrix) -> 'PenaltySource':
        return PenaltySource(SourceKind.MS_SOFT, matrix=matrix)

    @staticmethod
    def diagonal() -> 'PenaltySource':
        return PenaltySource(SourceKind.MA_DIAG)

    @property
    def n_classes(self) -> Optional[int]:
        if self.partition is not None:
            return self.partition.n_classes
        if self.matrix is not None:
            return self.matrix.n_classes
        return None

    def distance_matrix(self,
                        n_classes: int) -> np.ndarray:
        """
        :return: C x C matrix D with D[y, y'] = d(y, y')
        """
        if self.n_classes is not None and self.n_classes != n_classes:
            raise DataError(f"penalty source covers {self.n_classes} classes, "
                            f"scores have {n_classes}")
        if self.kind is SourceKind.MA_BINARY:
            group_of = self.partition.group_of
            return (group_of[:, None] != group_of[None, :]).astype(np.float64)
        if self.kind is SourceKind.MS_SOFT:
            return 1.0 - self.matrix.values
        return 1.0 - np.eye(n_classes)


def penalty(source: PenaltySource,
            y: int,
            y_hat: int) -> float:
    if source.kind is SourceKind.MA_BINARY:
        group_of = source.partition.group_of
        return float(group_of[y] != group_of[y_hat])
    if source.kind is SourceKind.MS_SOFT:
        return 1.0 - float(source.matrix.values[y, y_hat])
    return float(y != y_hat)
