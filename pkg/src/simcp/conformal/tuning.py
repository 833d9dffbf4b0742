"""
Selection of the penalty weight λ.

The calibration set is split at random into two halves: the q̂-calibration
half computes q̂_λ for every grid point and the λ-evaluation half measures
the resulting average set size. The λ with the smallest average size wins,
ties going to the smaller λ.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from simcp.conf import default_lambda_grid, stream
from simcp.conformal.engine import ScoredBatch, calibrate_batch, \
    predict_sets, score_batch
from simcp.data import CalibratedThreshold, ClassPartition, ConfigError, \
    LabelVector
from simcp.evaluation.metrics import evaluate
from simcp.scoring import Probabilities, ScoreFunction, as_probabilities, \
    uniform_draws
from simcp.similarity import PenaltySource

MIN_CALIBRATION = 4

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if values.size == 0 or not np.all(np.isfinite(values)):
            raise ConfigError("the lambda grid must hold finite values")
        if values[0] < 0:
            raise ConfigError(f"lambda grid starts at {values[0]}, "
                              f"values must be >= 0")
        if np.any(np.diff(values) <= 0):
            raise ConfigError("lambda grid must be strictly increasing")
        if not np.any(values == 0.0):
            raise ConfigError("lambda grid must include 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @staticmethod
    def default() -> 'LambdaGrid':
        return LambdaGrid(default_lambda_grid())

    @staticmethod
    def parse(text: Union[str, Iterable[float], None]) -> 'LambdaGrid':
        """
        Parses ``default`` or a comma separated list such as ``0,0.01,0.1``.
        """
        if text is None or (isinstance(text, str)
                            and text.strip().lower() in ("", "default")):
            return LambdaGrid.default()
        if isinstance(text, str):
            try:
                text = [float(v) for v in text.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"cannot parse lambda grid '{text}'")
        return LambdaGrid(np.asarray(list(text), dtype=np.float64))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class TuningReport:
    table: pd.DataFrame
    chosen_lambda: float
    threshold: CalibratedThreshold

    def size_at(self,
                lambda_: float) -> float:
        return float(self.table.loc[self.table["lambda"] == lambda_,
                                    "avg_size"].iloc[0])


def split_halves(n: int,
                 seed: int):
    """
    Random equal halves; with odd n the extra sample goes to q̂-calibration.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed,
                                                        stream("tuning")]))
    permutation = rng.permutation(n)
    n_first = (n + 1) // 2
    return permutation[:n_first], permutation[n_first:]


def tune_batch(batch: ScoredBatch,
               labels: np.ndarray,
               grid: LambdaGrid,
               alpha: float,
               seed: int,
               partition: Optional[ClassPartition] = None) -> TuningReport:
    if batch.n_samples < MIN_CALIBRATION:
        raise ConfigError(f"tuning needs at least {MIN_CALIBRATION} "
                          f"calibration samples, got {batch.n_samples}")
    calibration, evaluation = split_halves(batch.n_samples, seed)
    cal_batch, eval_batch = batch.take(calibration), batch.take(evaluation)
    rows = []
    thresholds = []
    for lambda_ in grid.values:
        threshold = calibrate_batch(cal_batch, labels[calibration], alpha,
                                    float(lambda_))
        report = evaluate(predict_sets(eval_batch, threshold),
                          labels[evaluation], partition, alpha)
        rows.append({"lambda":           float(lambda_),
                     "avg_size":         report.avg_size,
                     "avg_superclasses": report.avg_superclasses,
                     "coverage":         report.marginal_coverage,
                     "top_cov_gap":      report.top_cov_gap})
        thresholds.append(threshold)
    table = pd.DataFrame(rows)
    # argmin returns the first minimum, i.e. the smallest lambda on ties
    best = int(np.argmin(table["avg_size"].to_numpy()))
    logger.debug("Chose lambda=%g (avg size %.4f vs %.4f at lambda=0)",
                 table["lambda"].iloc[best], table["avg_size"].iloc[best],
                 table.loc[table["lambda"] == 0.0, "avg_size"].iloc[0])
    return TuningReport(table=table,
                        chosen_lambda=float(table["lambda"].iloc[best]),
                        threshold=thresholds[best])


def tune_lambda(cal_softmax: Probabilities,
                cal_labels: Union[LabelVector, np.ndarray],
                grid: LambdaGrid,
                scorer: ScoreFunction,
                source: Optional[PenaltySource],
                alpha: float,
                seed: int,
                partition: Optional[ClassPartition] = None) -> TuningReport:
    """
    :param partition: groups used for the superclass column; defaults to the
                      partition of a binary penalty source
    :raises ConfigError: fewer than four calibration samples or a grid
                         without 0
    """
    if not isinstance(grid, LambdaGrid):
        grid = LambdaGrid(grid)
    probs = as_probabilities(cal_softmax)
    labels = cal_labels.labels if isinstance(cal_labels, LabelVector) \
        else np.asarray(cal_labels, dtype=np.int64)
    if partition is None and source is not None:
        partition = source.partition
    batch = score_batch(probs, scorer, source,
                        uniform_draws(seed, probs.shape[0], "calibration"))
    return tune_batch(batch, labels, grid, alpha, seed, partition)
