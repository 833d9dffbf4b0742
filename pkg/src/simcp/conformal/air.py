"""
Accumulating inference rule: conformal prediction at the superclass level.

Superclass masses P(g | x) are visited in decreasing order. The calibration
score is the mass accumulated down to and including the true superclass;
at test time whole superclasses are added until the accumulated mass reaches
the threshold.
"""
import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from simcp.conformal.engine import calibrate
from simcp.data import CalibratedThreshold, ClassPartition, LabelVector, \
    PredictionSets, check_alpha
from simcp.scoring import Probabilities, as_probabilities, descending_order

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AirConfig:
    partition: ClassPartition
    alpha: float
    seed: int = 0

    def __post_init__(self):
        check_alpha(self.alpha)


def superclass_masses(softmax: Probabilities,
                      partition: ClassPartition) -> np.ndarray:
    """
    :return: n x G matrix of summed class probabilities per group
    """
    return as_probabilities(softmax) @ partition.one_hot()


def _accumulated(masses: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    order = descending_order(masses)
    return order, np.cumsum(np.take_along_axis(masses, order, axis=1), axis=1)


def air_scores(softmax: Probabilities,
               labels: Union[LabelVector, np.ndarray],
               partition: ClassPartition) -> np.ndarray:
    labels = labels.labels if isinstance(labels, LabelVector) else labels
    order, cumulative = _accumulated(superclass_masses(softmax, partition))
    true_groups = partition.group_of[labels]
    position = np.argmax(order == true_groups[:, None], axis=1)
    return cumulative[np.arange(cumulative.shape[0]), position]


def air_predict(softmax: Probabilities,
                threshold: CalibratedThreshold,
                partition: ClassPartition) -> PredictionSets:
    probs = as_probabilities(softmax)
    order, cumulative = _accumulated(superclass_masses(probs, partition))
    n_groups = partition.n_groups
    if threshold.is_vacuous:
        kept = np.full(probs.shape[0], n_groups)
    else:
        # the first prefix whose mass reaches q̂, never fewer than one group
        kept = np.minimum((cumulative < threshold.q_hat).sum(axis=1) + 1,
                          n_groups)
    group_kept = np.zeros((probs.shape[0], n_groups), dtype=bool)
    np.put_along_axis(group_kept, order,
                      np.arange(n_groups)[None, :] < kept[:, None], axis=1)
    membership = group_kept[:, partition.group_of]
    return PredictionSets(membership, np.argmax(probs, axis=1))


def air_calibrate_and_predict(softmax: Probabilities,
                              cal_labels: Union[LabelVector, np.ndarray],
                              test_softmax: Probabilities,
                              config: AirConfig) \
        -> Tuple[CalibratedThreshold, PredictionSets]:
    threshold = calibrate(air_scores(softmax, cal_labels, config.partition),
                          config.alpha)
    logger.debug("AIR threshold %.6f over %d groups", threshold.q_hat,
                 config.partition.n_groups)
    return threshold, air_predict(test_softmax, threshold, config.partition)
