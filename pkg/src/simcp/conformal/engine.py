"""
Split-conformal calibration and prediction with penalized scores

    s_λ(x, y) = s(x, y) + λ · d(y, ŷ(x))

where ŷ(x) is the tie-broken argmax of the softmax row and d comes from a
:class:`~simcp.similarity.PenaltySource`. With no source (or λ = 0) this is
standard split conformal prediction.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from simcp.data import CalibratedThreshold, CalibrationConfig, DataError, \
    InputError, LabelVector, PredictionSet, PredictionSets, check_alpha, \
    check_lambda, quantile_rank
from simcp.scoring import Probabilities, ScoreFunction, as_probabilities, \
    uniform_draws
from simcp.similarity import PenaltySource

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationResult:
    threshold: CalibratedThreshold
    scores_used: np.ndarray


def calibrate(cal_scores: Union[Sequence[float], np.ndarray],
              alpha: float,
              lambda_: float = 0.0) -> CalibratedThreshold:
    """
    The k-th smallest calibration score with k = ceil((n + 1)(1 - alpha)),
    or +infinity when k exceeds n.

    :raises InputError: when no scores are given or some are not finite
    """
    return calibration_result(cal_scores, alpha, lambda_).threshold


def calibration_result(cal_scores: Union[Sequence[float], np.ndarray],
                       alpha: float,
                       lambda_: float = 0.0) -> CalibrationResult:
    check_alpha(alpha)
    check_lambda(lambda_)
    scores = np.asarray(cal_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise InputError("cannot calibrate on an empty score list")
    if not np.all(np.isfinite(scores)):
        raise InputError("calibration scores must be finite")
    scores = np.sort(scores, kind="stable")
    n = scores.size
    k = quantile_rank(n, alpha)
    if k > n:
        logger.warning("n=%d calibration scores are too few for alpha=%g; "
                       "threshold is +infinity", n, alpha)
        q_hat = math.inf
    else:
        q_hat = float(scores[k - 1])
    return CalibrationResult(
        threshold=CalibratedThreshold(q_hat=q_hat, alpha=alpha, n_cal=n,
                                      lambda_=lambda_),
        scores_used=scores)


@dataclass(frozen=True)
class ScoredBatch:
    """
    Base scores for every (sample, class) pair together with the predicted
    class and the distance d(y, ŷ(x)) of each candidate. Penalized scores for
    any λ are derived without rescoring, so λ sweeps share one set of draws.
    """
    scores: np.ndarray
    predicted: np.ndarray
    distances: Optional[np.ndarray] = None

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    def penalized(self,
                  lambda_: float = 0.0) -> np.ndarray:
        if lambda_ == 0.0 or self.distances is None:
            return self.scores
        return self.scores + lambda_ * self.distances

    def at_labels(self,
                  labels: Union[LabelVector, np.ndarray],
                  lambda_: float = 0.0) -> np.ndarray:
        labels = labels.labels if isinstance(labels, LabelVector) else labels
        if labels.shape[0] != self.n_samples:
            raise DataError(f"{labels.shape[0]} labels for "
                            f"{self.n_samples} scored samples")
        rows = np.arange(self.n_samples)
        scores = self.scores[rows, labels]
        if lambda_ == 0.0 or self.distances is None:
            return scores
        return scores + lambda_ * self.distances[rows, labels]

    def take(self,
             indices: np.ndarray) -> 'ScoredBatch':
        return ScoredBatch(
            scores=self.scores[indices],
            predicted=self.predicted[indices],
            distances=None if self.distances is None
            else self.distances[indices])


def score_batch(softmax: Probabilities,
                scorer: ScoreFunction,
                source: Optional[PenaltySource],
                u: np.ndarray) -> ScoredBatch:
    probs = as_probabilities(softmax)
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != probs.shape[0]:
        raise DataError(f"{u.shape[0]} uniform draws for {probs.shape[0]} "
                        f"samples")
    predicted = np.argmax(probs, axis=1)
    distances = None
    if source is not None:
        # D is symmetric, so row ŷ holds d(y, ŷ) for every candidate y
        distances = source.distance_matrix(probs.shape[1])[predicted]
    return ScoredBatch(scores=scorer.scores(probs, u),
                       predicted=predicted,
                       distances=distances)


def penalized_calibration_scores(softmax: Probabilities,
                                 labels: Union[LabelVector, np.ndarray],
                                 scorer: ScoreFunction,
                                 source: Optional[PenaltySource],
                                 lambda_: float,
                                 seed: int) -> np.ndarray:
    """
    s(x_i, y_i) + λ · d(y_i, ŷ(x_i)) for every calibration sample, with the
    calibration uniform draws derived from ``seed``.
    """
    check_lambda(lambda_)
    probs = as_probabilities(softmax)
    batch = score_batch(probs, scorer, source,
                        uniform_draws(seed, probs.shape[0], "calibration"))
    return batch.at_labels(labels, lambda_)


def calibrate_softmax(softmax: Probabilities,
                      labels: Union[LabelVector, np.ndarray],
                      scorer: ScoreFunction,
                      source: Optional[PenaltySource],
                      config: CalibrationConfig) -> CalibratedThreshold:
    """
    Scores a calibration split and calibrates it with the alpha, seed and λ
    of ``config``.
    """
    return calibrate(penalized_calibration_scores(softmax, labels, scorer,
                                                  source, config.lambda_,
                                                  config.seed),
                     config.alpha, config.lambda_)


def calibrate_batch(batch: ScoredBatch,
                    labels: Union[LabelVector, np.ndarray],
                    alpha: float,
                    lambda_: float = 0.0) -> CalibratedThreshold:
    return calibrate(batch.at_labels(labels, lambda_), alpha, lambda_)


def predict_sets(batch: ScoredBatch,
                 threshold: CalibratedThreshold,
                 lambda_: Optional[float] = None) -> PredictionSets:
    """
    C_λ(x) = {y : s(x, y) + λ · d(y, ŷ(x)) <= q̂_λ}. Ties at the threshold are
    included; sets may come out empty.
    """
    lambda_ = threshold.lambda_ if lambda_ is None else lambda_
    if threshold.is_vacuous:
        membership = np.ones(batch.scores.shape, dtype=bool)
    else:
        membership = batch.penalized(lambda_) <= threshold.q_hat
    return PredictionSets(membership, batch.predicted)


def predict_set(softmax_row: np.ndarray,
                threshold: CalibratedThreshold,
                scorer: ScoreFunction,
                source: Optional[PenaltySource],
                lambda_: Optional[float] = None,
                u: float = 1.0) -> PredictionSet:
    batch = score_batch(np.atleast_2d(softmax_row), scorer, source,
                        np.array([u]))
    return predict_sets(batch, threshold, lambda_)[0]


def weighted_size(sets: PredictionSets,
                  batch: ScoredBatch) -> np.ndarray:
    """
    S(x) = Σ_y d(y, ŷ(x)) · 1{y ∈ C(x)} per sample.
    """
    if batch.distances is None:
        raise InputError("weighted size needs a penalty source")
    return (batch.distances * sets.membership).sum(axis=1)
