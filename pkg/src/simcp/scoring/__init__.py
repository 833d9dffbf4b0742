"""
Nonconformity score functions.

A score function maps a softmax row, a candidate label and one uniform draw
per sample to a float; higher means less plausible.
"""
from abc import ABCMeta, abstractmethod
from typing import Any, Dict, Union

import numpy as np

from simcp.conf import stream
from simcp.data import LabelVector, SoftmaxMatrix

Probabilities = Union[np.ndarray, SoftmaxMatrix]


def as_probabilities(probs: Probabilities) -> np.ndarray:
    values = probs.values if isinstance(probs, SoftmaxMatrix) else probs
    return np.atleast_2d(np.asarray(values, dtype=np.float64))


def descending_order(probs: np.ndarray) -> np.ndarray:
    """
    Class indices of each row sorted by decreasing probability; ties keep the
    lower class index first.
    """
    return np.argsort(-probs, axis=1, kind="stable")


def class_ranks(probs: np.ndarray) -> np.ndarray:
    """
    :return: n x C matrix of 1-based ranks o_x(y) under the tie-broken order
    """
    order = descending_order(probs)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order,
                      np.broadcast_to(np.arange(1, probs.shape[1] + 1),
                                      order.shape),
                      axis=1)
    return ranks


def uniform_draws(seed: int,
                  n_samples: int,
                  stream_name: str = "calibration") -> np.ndarray:
    """
    One uniform draw per sample. Draw i depends only on (seed, stream, i), so
    the same sample always sees the same u across λ values and candidate
    labels.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed,
                                                        stream(stream_name)]))
    return rng.random(n_samples)


class ScoreFunction(metaclass=ABCMeta):
    name: str = ""
    randomized: bool = False

    @abstractmethod
    def scores(self,
               probs: Probabilities,
               u: np.ndarray) -> np.ndarray:
        """
        Scores every candidate label.

        :param probs: n x C softmax values
        :param u: n uniform draws, one per sample
        :return: n x C score matrix
        """
        raise NotImplementedError()

    def label_scores(self,
                     probs: Probabilities,
                     labels: Union[LabelVector, np.ndarray],
                     u: np.ndarray) -> np.ndarray:
        labels = labels.labels if isinstance(labels, LabelVector) else labels
        all_scores = self.scores(probs, u)
        return all_scores[np.arange(all_scores.shape[0]), labels]

    def __call__(self,
                 softmax_row: np.ndarray,
                 y: int,
                 u: float = 1.0) -> float:
        return float(self.scores(np.atleast_2d(softmax_row),
                                 np.array([u]))[0, y])

    @property
    def params(self) -> Dict[str, Any]:
        return dict()

    def __repr__(self):
        params = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"<{self.__class__.__name__}({params})>"


def score_matrix(softmax: Probabilities,
                 labels: Union[LabelVector, np.ndarray, None],
                 scorer: ScoreFunction,
                 seed: int,
                 stream_name: str = "calibration") -> np.ndarray:
    """
    Calibration mode (labels given) returns an n x 1 column of true-label
    scores; deployment mode (labels None) returns the full n x C matrix.
    """
    probs = as_probabilities(softmax)
    u = uniform_draws(seed, probs.shape[0], stream_name)
    if labels is None:
        return scorer.scores(probs, u)
    return scorer.label_scores(probs, labels, u)[:, None]
