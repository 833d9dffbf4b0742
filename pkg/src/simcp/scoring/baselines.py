"""
LAC, RAPS and SAPS scores, both as scalar functions of one softmax row and
as vectorized :class:`~simcp.scoring.ScoreFunction` implementations.
"""
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from simcp.conf import Config
from simcp.data import ConfigError
from simcp.scoring import ScoreFunction, as_probabilities, class_ranks, \
    descending_order


@dataclass(frozen=True)
class RapsParams:
    lambda_raps: float = Config["raps.lambda_raps"]
    k_reg: int = Config["raps.k_reg"]

    def __post_init__(self):
        if self.lambda_raps < 0:
            raise ConfigError(f"lambda_raps must be >= 0, got "
                              f"{self.lambda_raps}")
        if int(self.k_reg) != self.k_reg or self.k_reg < 1:
            raise ConfigError(f"k_reg must be a positive integer, got "
                              f"{self.k_reg}")


@dataclass(frozen=True)
class SapsParams:
    lambda_saps: float = Config["saps.lambda_saps"]

    def __post_init__(self):
        if not self.lambda_saps > 0:
            raise ConfigError(f"lambda_saps must be > 0, got "
                              f"{self.lambda_saps}")


def _ranked_before(softmax_row: np.ndarray,
                   y: int) -> np.ndarray:
    row = np.asarray(softmax_row, dtype=np.float64)
    classes = np.arange(row.shape[0])
    return (row > row[y]) | ((row == row[y]) & (classes < y))


def lac_score(softmax_row: np.ndarray,
              y: int) -> float:
    return 1.0 - float(softmax_row[y])


def raps_score(softmax_row: np.ndarray,
               y: int,
               params: RapsParams,
               u: float) -> float:
    row = np.asarray(softmax_row, dtype=np.float64)
    before = _ranked_before(row, y)
    rank = int(before.sum()) + 1
    return (float(row[before].sum())
            + params.lambda_raps * max(rank - params.k_reg, 0)
            + float(row[y]) * u)


def saps_score(softmax_row: np.ndarray,
               y: int,
               params: SapsParams,
               u: float) -> float:
    row = np.asarray(softmax_row, dtype=np.float64)
    rank = int(_ranked_before(row, y).sum()) + 1
    top = float(row.max())
    if rank == 1:
        return u * top
    return top + (rank - 2 + u) * params.lambda_saps


class LacScore(ScoreFunction):
    name = "lac"

    def scores(self,
               probs,
               u):
        return 1.0 - as_probabilities(probs)


class RapsScore(ScoreFunction):
    name = "raps"
    randomized = True

    def __init__(self,
                 lambda_raps: float = Config["raps.lambda_raps"],
                 k_reg: int = Config["raps.k_reg"]):
        self.config = RapsParams(lambda_raps, int(k_reg))

    @property
    def params(self) -> Dict[str, Any]:
        return {"lambda_raps": self.config.lambda_raps,
                "k_reg":       self.config.k_reg}

    def scores(self,
               probs,
               u):
        probs = as_probabilities(probs)
        order = descending_order(probs)
        sorted_p = np.take_along_axis(probs, order, axis=1)
        mass_before = np.zeros_like(sorted_p)
        mass_before[:, 1:] = np.cumsum(sorted_p[:, :-1], axis=1)
        ranks = np.arange(1, probs.shape[1] + 1)
        penalty = self.config.lambda_raps * np.maximum(
            ranks - self.config.k_reg, 0)
        # added in this order so scores stay monotone in rank under rounding
        sorted_scores = (mass_before + sorted_p * np.asarray(u)[:, None]) \
            + penalty
        scores = np.empty_like(sorted_scores)
        np.put_along_axis(scores, order, sorted_scores, axis=1)
        return scores


class SapsScore(ScoreFunction):
    name = "saps"
    randomized = True

    def __init__(self,
                 lambda_saps: float = Config["saps.lambda_saps"]):
        self.config = SapsParams(lambda_saps)

    @property
    def params(self) -> Dict[str, Any]:
        return {"lambda_saps": self.config.lambda_saps}

    def scores(self,
               probs,
               u):
        probs = as_probabilities(probs)
        u = np.asarray(u)[:, None]
        top = probs.max(axis=1, keepdims=True)
        ranks = class_ranks(probs)
        return np.where(ranks == 1,
                        u * top,
                        top + (ranks - 2 + u) * self.config.lambda_saps)
