"""
Shared domain types and the error hierarchy.

All types are frozen dataclasses wrapping read-only numpy arrays, so they can
be shared freely between worker threads once constructed.
"""
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

SOFTMAX_TOLERANCE = 1e-6
RENORMALIZE_TOLERANCE = 1e-12
SYMMETRY_TOLERANCE = 1e-9


class SimcpError(Exception):
    """
    Base class for all errors raised by simcp.
    """


class FormatError(SimcpError):
    """
    A file does not parse under its declared format or has the wrong shape.
    """


class DataError(SimcpError):
    """
    Parsed values violate a domain invariant.
    """


class InputError(SimcpError):
    """
    An operation received input it cannot work with (e.g. no scores).
    """


class ConfigError(SimcpError):
    """
    A parameter or configuration value is out of range.
    """


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class SoftmaxMatrix:
    """
    An n_samples x C row-stochastic matrix of classifier probabilities.
    Construct through :func:`validate_softmax` unless the rows are known to be
    valid already.
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"softmax must be 2-dimensional, got {values.ndim}")
        if values.shape[1] < 2:
            raise DataError(
                f"softmax needs at least 2 classes, got {values.shape[1]}")
        if not np.all(np.isfinite(values)):
            raise DataError("softmax contains non-finite values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            row = int(np.argwhere((values < 0.0) | (values > 1.0))[0, 0])
            raise DataError(f"softmax row {row} has entries outside [0, 1]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]

    def take(self,
             indices: np.ndarray) -> 'SoftmaxMatrix':
        return SoftmaxMatrix(self.values[indices])

    def predicted_classes(self) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index
        return np.argmax(self.values, axis=1)


def validate_softmax(matrix: Union[np.ndarray, SoftmaxMatrix]) -> SoftmaxMatrix:
    """
    Checks the softmax invariants and renormalizes rows whose sum is within
    ``SOFTMAX_TOLERANCE`` of one. Rows already summing to one within
    ``RENORMALIZE_TOLERANCE`` are left untouched, which keeps the operation
    idempotent.

    :param matrix: the loaded matrix
    :return: a valid SoftmaxMatrix
    :raises DataError: when a row sum falls outside the tolerance
    """
    values = np.array(matrix.values if isinstance(matrix, SoftmaxMatrix)
                      else matrix, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"softmax must be 2-dimensional, got {values.ndim}")
    if not np.all(np.isfinite(values)):
        raise DataError("softmax contains non-finite values")
    sums = values.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > SOFTMAX_TOLERANCE)
    if bad.size:
        row = int(bad[0])
        raise DataError(f"softmax row {row} sums to {sums[row]!r}, "
                        f"outside 1 +/- {SOFTMAX_TOLERANCE}")
    drift = np.abs(sums - 1.0) > RENORMALIZE_TOLERANCE
    if np.any(drift):
        values[drift] = values[drift] / sums[drift, None]
    return SoftmaxMatrix(values)


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray
    n_classes: Optional[int] = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DataError("labels must be a 1-dimensional vector")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DataError("labels must be integer class indices")
        labels = labels.astype(np.int64)
        if labels.size and labels.min() < 0:
            raise DataError(f"label {int(labels.min())} is negative")
        if self.n_classes is not None and labels.size \
                and labels.max() >= self.n_classes:
            index = int(np.argmax(labels >= self.n_classes))
            raise DataError(f"label {int(labels[index])} at row {index} is "
                            f"outside [0, {self.n_classes})")
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self):
        return self.labels.shape[0]

    def take(self,
             indices: np.ndarray) -> 'LabelVector':
        return LabelVector(self.labels[indices], self.n_classes)


@dataclass(frozen=True)
class ClassPartition:
    """
    The map g from class index to group (superclass) index.
    """
    group_of: np.ndarray

    def __post_init__(self):
        group_of = np.asarray(self.group_of, dtype=np.int64)
        if group_of.ndim != 1 or group_of.size == 0:
            raise DataError("a partition needs a non-empty 1-dimensional map")
        if group_of.min() < 0:
            raise DataError(f"group index {int(group_of.min())} is negative")
        n_groups = int(group_of.max()) + 1
        missing = np.setdiff1d(np.arange(n_groups), group_of)
        if missing.size:
            raise DataError(f"group {int(missing[0])} has no classes")
        object.__setattr__(self, "group_of", _frozen(group_of))

    @property
    def n_classes(self) -> int:
        return self.group_of.shape[0]

    @property
    def n_groups(self) -> int:
        return int(self.group_of.max()) + 1

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group_of, minlength=self.n_groups)

    def one_hot(self) -> np.ndarray:
        """
        :return: C x G indicator matrix with a single one per class row
        """
        indicator = np.zeros((self.n_classes, self.n_groups))
        indicator[np.arange(self.n_classes), self.group_of] = 1.0
        return indicator


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataError(f"similarity matrix must be square, "
                            f"got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("similarity matrix contains non-finite values")
        if not np.allclose(values, values.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
            raise DataError("similarity matrix is not symmetric")
        if values.max() > 1.0:
            raise DataError("similarity matrix has entries above 1")
        np.fill_diagonal(values, 1.0)
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n_classes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    labels: LabelVector

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 1:
            raise DataError("features must be a 2-dimensional matrix with "
                            "at least one column")
        if not np.all(np.isfinite(values)):
            raise DataError("features contain non-finite values")
        if len(self.labels) != values.shape[0]:
            raise DataError(f"{len(self.labels)} labels for "
                            f"{values.shape[0]} feature rows")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CalibrationConfig:
    alpha: float
    seed: int = 0
    lambda_: float = 0.0

    def __post_init__(self):
        check_alpha(self.alpha)
        check_lambda(self.lambda_)


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def check_lambda(lambda_: float) -> float:
    if not lambda_ >= 0.0:
        raise ConfigError(f"lambda must be >= 0, got {lambda_}")
    return lambda_


def quantile_rank(n_cal: int,
                  alpha: float) -> int:
    """
    :return: k = ceil((n + 1)(1 - alpha)), the 1-based order statistic used
             as the conformal threshold
    """
    return int(math.ceil((n_cal + 1) * (1.0 - alpha)))


@dataclass(frozen=True)
class CalibratedThreshold:
    q_hat: float
    alpha: float
    n_cal: int
    lambda_: float = 0.0

    def __post_init__(self):
        check_alpha(self.alpha)
        check_lambda(self.lambda_)
        if quantile_rank(self.n_cal, self.alpha) > self.n_cal \
                and not math.isinf(self.q_hat):
            raise DataError(f"threshold for n={self.n_cal}, alpha={self.alpha} "
                            f"must be +infinity")

    @property
    def is_vacuous(self) -> bool:
        return math.isinf(self.q_hat)


@dataclass(frozen=True)
class PredictionSet:
    classes: Sequence[int]
    predicted_class: int

    def __post_init__(self):
        classes = tuple(int(c) for c in self.classes)
        if any(b <= a for a, b in zip(classes, classes[1:])):
            raise DataError(f"prediction set {classes} is not strictly "
                            f"increasing")
        if classes and classes[0] < 0:
            raise DataError(f"prediction set {classes} has a negative class")
        object.__setattr__(self, "classes", classes)

    @property
    def size(self) -> int:
        return len(self.classes)

    def superclasses(self,
                     partition: ClassPartition) -> List[int]:
        return sorted({int(partition.group_of[c]) for c in self.classes})

    def __contains__(self, item):
        return item in self.classes


@dataclass(frozen=True)
class PredictionSets:
    """
    A batch of prediction sets stored as an n x C boolean membership matrix.
    """
    membership: np.ndarray
    predicted: np.ndarray = field(default=None)

    def __post_init__(self):
        membership = np.array(self.membership, dtype=bool)
        if membership.ndim != 2:
            raise DataError("membership must be an n x C matrix")
        predicted = np.full(membership.shape[0], -1, dtype=np.int64) \
            if self.predicted is None \
            else np.asarray(self.predicted, dtype=np.int64)
        if predicted.shape[0] != membership.shape[0]:
            raise DataError("one predicted class is required per set")
        object.__setattr__(self, "membership", _frozen(membership))
        object.__setattr__(self, "predicted", _frozen(predicted))

    @staticmethod
    def from_sets(sets: Iterable[PredictionSet],
                  n_classes: int) -> 'PredictionSets':
        sets = list(sets)
        membership = np.zeros((len(sets), n_classes), dtype=bool)
        for i, prediction in enumerate(sets):
            if prediction.classes and prediction.classes[-1] >= n_classes:
                raise DataError(f"set {i} holds class {prediction.classes[-1]}"
                                f" outside [0, {n_classes})")
            membership[i, list(prediction.classes)] = True
        return PredictionSets(membership,
                              np.array([s.predicted_class for s in sets],
                                       dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return self.membership.shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return self.membership.sum(axis=1)

    def __len__(self):
        return self.membership.shape[0]

    def __getitem__(self, index: int) -> PredictionSet:
        return PredictionSet(np.flatnonzero(self.membership[index]),
                             int(self.predicted[index]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def group_membership(self,
                         partition: ClassPartition) -> np.ndarray:
        """
        :return: n x G boolean matrix, True where a set touches the group
        """
        return (self.membership.astype(np.float64) @ partition.one_hot()) > 0
