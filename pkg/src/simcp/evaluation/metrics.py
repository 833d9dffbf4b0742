"""
Evaluation metrics for a batch of prediction sets: average size, average
number of superclasses, marginal coverage, the largest class-conditional
coverage deviation (TopCovGap) and the fraction of empty sets.
"""
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from simcp.data import ClassPartition, DataError, LabelVector, PredictionSet, \
    PredictionSets, check_alpha

SetsLike = Union[PredictionSets, Sequence[PredictionSet]]


@dataclass(frozen=True)
class MetricsReport:
    avg_size: float
    avg_superclasses: Optional[float]
    marginal_coverage: float
    top_cov_gap: float
    n_test: int
    empty_set_fraction: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _as_batch(sets: SetsLike,
              labels: np.ndarray,
              partition: Optional[ClassPartition]) -> PredictionSets:
    if isinstance(sets, PredictionSets):
        return sets
    sets = list(sets)
    n_classes = partition.n_classes if partition is not None else max(
        [int(labels.max()) + 1 if labels.size else 1]
        + [s.classes[-1] + 1 for s in sets if s.classes])
    return PredictionSets.from_sets(sets, n_classes)


def class_coverage(sets: PredictionSets,
                   labels: np.ndarray) -> pd.DataFrame:
    """
    Coverage of each class y over I_y = {i : y_i = y}; classes with an empty
    I_y are left out.
    """
    covered = sets.membership[np.arange(len(sets)), labels]
    df = pd.DataFrame({"label": labels, "covered": covered})
    table = df.groupby("label")["covered"].agg(["mean", "size"])
    return table.rename(columns={"mean": "coverage", "size": "count"})


def evaluate(sets: SetsLike,
             labels: Union[LabelVector, np.ndarray],
             partition: Optional[ClassPartition],
             alpha: float) -> MetricsReport:
    """
    Empty sets count as size 0, zero superclasses and a miss.
    """
    check_alpha(alpha)
    labels = labels.labels if isinstance(labels, LabelVector) \
        else np.asarray(labels, dtype=np.int64)
    batch = _as_batch(sets, labels, partition)
    if len(batch) != labels.shape[0]:
        raise DataError(f"{len(batch)} prediction sets for "
                        f"{labels.shape[0]} labels")
    if len(batch) == 0:
        raise DataError("cannot evaluate an empty test split")
    if labels.max() >= batch.n_classes:
        raise DataError(f"label {int(labels.max())} outside the "
                        f"{batch.n_classes} predicted classes")
    sizes = batch.sizes
    covered = batch.membership[np.arange(len(batch)), labels]
    avg_superclasses = None
    if partition is not None:
        avg_superclasses = float(
            batch.group_membership(partition).sum(axis=1).mean())
    per_class = class_coverage(batch, labels)
    top_cov_gap = float(np.abs(per_class["coverage"] - (1.0 - alpha)).max())
    return MetricsReport(avg_size=float(sizes.mean()),
                         avg_superclasses=avg_superclasses,
                         marginal_coverage=float(covered.mean()),
                         top_cov_gap=top_cov_gap,
                         n_test=int(len(batch)),
                         empty_set_fraction=float((sizes == 0).mean()))
