"""
Repeated random calibration/test splits.

Each trial splits the data with its own seed (``seed XOR trial``), runs the
configured method end to end and evaluates it on the test split. Trials are
independent, so they run on a joblib worker pool and the result does not
depend on the number of workers.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from simcp.api import PenaltyKind
from simcp.conf import Config, stream
from simcp.conformal.air import air_calibrate_and_predict, AirConfig
from simcp.conformal.engine import calibrate_batch, predict_sets, score_batch
from simcp.conformal.tuning import MIN_CALIBRATION, LambdaGrid, tune_batch
from simcp.data import ClassPartition, ConfigError, LabelVector, \
    SoftmaxMatrix, check_alpha, check_lambda
from simcp.evaluation.metrics import evaluate
from simcp.scoring import ScoreFunction, as_probabilities, uniform_draws
from simcp.similarity import PenaltySource

METRICS = ["avg_size", "avg_superclasses", "coverage", "top_cov_gap",
           "empty_set_fraction"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrialProtocol:
    n_trials: int = Config["trials"]
    cal_fraction: float = Config["cal_fraction"]
    seed: int = Config["seed"]

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError(f"need at least one trial, got {self.n_trials}")
        if not 0.0 < self.cal_fraction < 1.0:
            raise ConfigError(f"cal_fraction must lie in (0, 1), got "
                              f"{self.cal_fraction}")


@dataclass(frozen=True)
class MethodConfig:
    """
    One conformal method: a score function, a penalty kind and either a fixed
    λ or a grid to tune it on. ``partition`` feeds AIR and the superclass
    metric; ``source`` is the penalty for MA/MS/Diag.
    """
    scorer: ScoreFunction
    penalty: PenaltyKind = PenaltyKind.NONE
    alpha: float = Config["alpha"]
    source: Optional[PenaltySource] = None
    partition: Optional[ClassPartition] = None
    lambda_: Optional[float] = None
    grid: Optional[LambdaGrid] = None

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.lambda_ is not None:
            check_lambda(self.lambda_)
        if self.penalty.is_penalized and self.source is None:
            raise ConfigError(f"{self.penalty.method_name} needs a penalty "
                              f"source")
        if self.penalty is PenaltyKind.AIR and self.partition is None:
            raise ConfigError("AIR needs a class partition")

    @property
    def tuned(self) -> bool:
        return self.penalty.is_penalized and self.lambda_ is None

    @property
    def name(self) -> str:
        return self.penalty.method_name

    @property
    def metric_partition(self) -> Optional[ClassPartition]:
        if self.partition is None and self.source is not None:
            return self.source.partition
        return self.partition


@dataclass(frozen=True)
class TrialAggregate:
    trials: pd.DataFrame
    summary: pd.DataFrame = field(init=False)

    def __post_init__(self):
        columns = [m for m in METRICS + ["lambda"]
                   if self.trials[m].notna().any()]
        summary = pd.DataFrame({
            "metric": columns,
            "mean":   [float(self.trials[c].mean()) for c in columns],
            "std":    [float(self.trials[c].std(ddof=0)) for c in columns],
        })
        object.__setattr__(self, "summary", summary)

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    def mean(self,
             metric: str) -> float:
        return float(self.summary.set_index("metric").loc[metric, "mean"])

    def std(self,
            metric: str) -> float:
        return float(self.summary.set_index("metric").loc[metric, "std"])


def split_indices(n: int,
                  cal_fraction: float,
                  seed: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed,
                                                        stream("split")]))
    permutation = rng.permutation(n)
    n_cal = int(round(cal_fraction * n))
    return permutation[:n_cal], permutation[n_cal:]


def run_trial(probs: np.ndarray,
              labels: np.ndarray,
              trial: int,
              protocol: TrialProtocol,
              method: MethodConfig) -> Dict[str, Any]:
    seed = protocol.seed ^ trial
    cal, test = split_indices(probs.shape[0], protocol.cal_fraction, seed)
    if method.tuned and cal.shape[0] < MIN_CALIBRATION:
        raise ConfigError(f"calibration split of {cal.shape[0]} samples is "
                          f"too small to tune lambda")
    if cal.shape[0] == 0 or test.shape[0] == 0:
        raise ConfigError(f"split of {probs.shape[0]} samples at "
                          f"cal_fraction={protocol.cal_fraction} leaves an "
                          f"empty side")
    lambda_ = 0.0
    if method.penalty is PenaltyKind.AIR:
        _, sets = air_calibrate_and_predict(
            probs[cal], labels[cal], probs[test],
            AirConfig(method.partition, method.alpha, seed))
    else:
        source = method.source if method.penalty.is_penalized else None
        cal_batch = score_batch(probs[cal], method.scorer, source,
                                uniform_draws(seed, cal.shape[0],
                                              "calibration"))
        if method.tuned:
            report = tune_batch(cal_batch, labels[cal],
                                method.grid or LambdaGrid.default(),
                                method.alpha, seed, method.metric_partition)
            lambda_, threshold = report.chosen_lambda, report.threshold
        else:
            lambda_ = (method.lambda_ or 0.0) if source is not None else 0.0
            threshold = calibrate_batch(cal_batch, labels[cal], method.alpha,
                                        lambda_)
        test_batch = score_batch(probs[test], method.scorer, source,
                                 uniform_draws(seed, test.shape[0], "test"))
        sets = predict_sets(test_batch, threshold)
    report = evaluate(sets, labels[test], method.metric_partition,
                      method.alpha)
    return {
        "trial":              trial,
        "method":             method.name,
        "score":              method.scorer.name,
        "lambda":             lambda_,
        "avg_size":           report.avg_size,
        "avg_superclasses":   report.avg_superclasses,
        "coverage":           report.marginal_coverage,
        "top_cov_gap":        report.top_cov_gap,
        "empty_set_fraction": report.empty_set_fraction,
    }


def run_trials(full_softmax: Union[SoftmaxMatrix, np.ndarray],
               labels: Union[LabelVector, np.ndarray],
               protocol: TrialProtocol,
               method: MethodConfig,
               n_jobs: int = 1,
               progress: bool = False) -> TrialAggregate:
    probs = as_probabilities(full_softmax)
    labels = labels.labels if isinstance(labels, LabelVector) \
        else np.asarray(labels, dtype=np.int64)
    logger.info("Running %d trials of %s/%s at alpha=%g",
                protocol.n_trials, method.name, method.scorer.name,
                method.alpha)
    rows: List[Dict[str, Any]] = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(run_trial)(probs, labels, trial, protocol, method)
        for trial in tqdm(range(protocol.n_trials), disable=not progress,
                          desc=method.name))
    trials = pd.DataFrame(rows).sort_values("trial").reset_index(drop=True)
    return TrialAggregate(trials)
