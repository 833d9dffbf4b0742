"""
Numerical checks of the behaviour of class-similarity penalized conformal
prediction.

* :func:`estimate_size_curve` sweeps λ, measures the average set size on a
  held-out half and compares the sign of its small-λ slope with the sign of
  p₁·n̄₀ − p₀·n̄₁, the prediction for uniform within-group labels.
* :func:`verify_exact_properties` checks, per λ and per sample, that
  q̂ ≤ q̂_λ ≤ q̂ + λ, that no out-of-group class enters a penalized set that
  was not in the standard set, that the groups of a penalized set are a
  subset of the standard set's groups whenever ŷ is in the standard set, and
  that the distance-weighted size never grows.
* :func:`marginal_cdf_check` compares the conditional score CDF F_z(t) with
  the average of the per-sample in-group/out-of-group quasi-CDFs weighted by
  p_z(x).
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from simcp.api import ScoreKind
from simcp.conformal.engine import ScoredBatch, calibrate_batch, \
    predict_sets, score_batch, weighted_size
from simcp.conformal.tuning import split_halves
from simcp.data import ClassPartition, ConfigError, LabelVector, \
    SoftmaxMatrix, check_alpha, check_lambda
from simcp.scoring import ScoreFunction, uniform_draws
from simcp.similarity import PenaltySource, SourceKind
from simcp.theory.synth import SynthConfig, SyntheticDataset, generate

SLOPE_POINTS = 3
SLOPE_TOLERANCE = 1e-9
NOISE_BAND = 3.0

DataLike = Union[SyntheticDataset,
                 Tuple[SoftmaxMatrix, LabelVector, ClassPartition]]
ScorerLike = Union[ScoreFunction, ScoreKind, str]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TheoryEstimates:
    p0_hat: float
    p1_hat: float
    n0_bar: float
    n1_bar: float
    size_curve: pd.DataFrame
    derivative_sign: int
    predicted_sign: int
    slope: float

    @property
    def imbalance(self) -> float:
        """
        p̂₁·n̄₀ − p̂₀·n̄₁
        """
        return self.p1_hat * self.n0_bar - self.p0_hat * self.n1_bar


@dataclass(frozen=True)
class ExactPropertyReport:
    table: pd.DataFrame
    n_sample_checks: int
    counterexample: Optional[Dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        return self.counterexample is None


def _unpack(data: DataLike) -> Tuple[np.ndarray, np.ndarray, ClassPartition]:
    if isinstance(data, SyntheticDataset):
        return data.softmax.values, data.labels.labels, data.partition
    softmax, labels, partition = data
    probs = softmax.values if isinstance(softmax, SoftmaxMatrix) \
        else np.asarray(softmax, dtype=np.float64)
    labels = labels.labels if isinstance(labels, LabelVector) \
        else np.asarray(labels, dtype=np.int64)
    return probs, labels, partition


def _scorer(score: ScorerLike) -> ScoreFunction:
    if isinstance(score, ScoreFunction):
        return score
    return ScoreKind(score).create() if isinstance(score, str) \
        else score.create()


def _lambdas(lambda_list: Sequence[float]) -> np.ndarray:
    values = np.unique(np.asarray(list(lambda_list), dtype=np.float64))
    for value in values:
        check_lambda(float(value))
    return values if values[0] == 0.0 else np.concatenate(([0.0], values))


def _sign(value: float,
          tolerance: float) -> int:
    return 0 if abs(value) <= tolerance else int(np.sign(value))


def _halves(probs: np.ndarray,
            labels: np.ndarray,
            scorer: ScoreFunction,
            source: Optional[PenaltySource],
            seed: int):
    batch = score_batch(probs, scorer, source,
                        uniform_draws(seed, probs.shape[0], "calibration"))
    calibration, evaluation = split_halves(probs.shape[0], seed)
    return (batch.take(calibration), labels[calibration],
            batch.take(evaluation), labels[evaluation])


def _curve_point(cal_batch: ScoredBatch,
                 cal_labels: np.ndarray,
                 eval_batch: ScoredBatch,
                 partition: ClassPartition,
                 alpha: float,
                 lambda_: float) -> Dict[str, float]:
    threshold = calibrate_batch(cal_batch, cal_labels, alpha, lambda_)
    sets = predict_sets(eval_batch, threshold)
    return {"lambda":       lambda_,
            "size":         float(sets.sizes.mean()),
            "superclasses": float(
                sets.group_membership(partition).sum(axis=1).mean())}


def in_group_rates(probs: np.ndarray,
                   labels: np.ndarray,
                   partition: ClassPartition) -> Tuple[float, float, float]:
    """
    :return: (p̂₀, n̄₀, n̄₁) where the in-group of a sample is the group of its
             predicted class
    """
    predicted_group = partition.group_of[np.argmax(probs, axis=1)]
    p0_hat = float(np.mean(partition.group_of[labels] == predicted_group))
    n0_bar = float(np.mean(partition.group_sizes()[predicted_group]))
    return p0_hat, n0_bar, float(partition.n_classes) - n0_bar


def estimate_size_curve(data: DataLike,
                        score_kind: ScorerLike,
                        penalty_source: Optional[PenaltySource],
                        alpha: float,
                        lambda_list: Sequence[float],
                        seed: int,
                        n_jobs: int = 1) -> TheoryEstimates:
    """
    Average set size and superclass count per λ, calibrated on one random half
    and measured on the other with one shared set of uniform draws.

    The measured sign comes from a least-squares line through λ = 0 and the
    three smallest positive λ. The predicted sign is that of p̂₁·n̄₀ − p̂₀·n̄₁;
    differences within three standard errors of p̂₀ count as 0.

    :raises ConfigError: fewer than three positive λ values
    """
    check_alpha(alpha)
    lambdas = _lambdas(lambda_list)
    if (lambdas > 0).sum() < SLOPE_POINTS:
        raise ConfigError(f"the size curve needs at least {SLOPE_POINTS} "
                          f"positive lambda values, got "
                          f"{int((lambdas > 0).sum())}")
    probs, labels, partition = _unpack(data)
    if penalty_source is None:
        penalty_source = PenaltySource.binary(partition)
    scorer = _scorer(score_kind)
    cal_batch, cal_labels, eval_batch, _ = _halves(probs, labels, scorer,
                                                   penalty_source, seed)
    rows = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_curve_point)(cal_batch, cal_labels, eval_batch, partition,
                              alpha, float(lambda_))
        for lambda_ in lambdas)
    curve = pd.DataFrame(rows)

    head = curve.iloc[:SLOPE_POINTS + 1]
    slope = float(np.polyfit(head["lambda"], head["size"], 1)[0])

    p0_hat, n0_bar, n1_bar = in_group_rates(probs, labels, partition)
    p1_hat = 1.0 - p0_hat
    band = NOISE_BAND * (n0_bar + n1_bar) \
        * np.sqrt(p0_hat * p1_hat / probs.shape[0])
    estimates = TheoryEstimates(
        p0_hat=p0_hat, p1_hat=p1_hat, n0_bar=n0_bar, n1_bar=n1_bar,
        size_curve=curve,
        derivative_sign=_sign(slope, SLOPE_TOLERANCE),
        predicted_sign=_sign(p1_hat * n0_bar - p0_hat * n1_bar, band),
        slope=slope)
    logger.debug("slope %.5f (sign %d), predicted sign %d from p0=%.4f "
                 "n0=%.2f n1=%.2f", slope, estimates.derivative_sign,
                 estimates.predicted_sign, p0_hat, n0_bar, n1_bar)
    return estimates


def verify_exact_properties(data: DataLike,
                            score_kind: ScorerLike,
                            penalty_source: Optional[PenaltySource],
                            alpha: float,
                            lambda_list: Sequence[float],
                            seed: int) -> ExactPropertyReport:
    """
    Calibrates on one half and checks every sample of the other half for
    every λ, all with the same uniform draws.

    :raises ConfigError: for a penalty other than the binary group mismatch
    """
    check_alpha(alpha)
    probs, labels, partition = _unpack(data)
    if penalty_source is None:
        penalty_source = PenaltySource.binary(partition)
    if penalty_source.kind is not SourceKind.MA_BINARY:
        raise ConfigError(f"exact properties hold for the binary group "
                          f"penalty, got {penalty_source.kind.value}")
    group_of = penalty_source.partition.group_of
    scorer = _scorer(score_kind)
    cal_batch, cal_labels, eval_batch, _ = _halves(probs, labels, scorer,
                                                   penalty_source, seed)
    out_of_group = eval_batch.distances > 0
    rows_idx = np.arange(eval_batch.n_samples)

    base_threshold = calibrate_batch(cal_batch, cal_labels, alpha, 0.0)
    base_sets = predict_sets(eval_batch, base_threshold, 0.0)
    base_groups = base_sets.group_membership(penalty_source.partition)
    base_weighted = weighted_size(base_sets, eval_batch)
    anchored = base_sets.membership[rows_idx, eval_batch.predicted]

    rows: List[Dict[str, Any]] = []
    counterexample = None
    for lambda_ in _lambdas(lambda_list):
        lambda_ = float(lambda_)
        threshold = calibrate_batch(cal_batch, cal_labels, alpha, lambda_)
        sets = predict_sets(eval_batch, threshold)
        groups = sets.group_membership(penalty_source.partition)

        bounds_ok = bool(base_threshold.q_hat <= threshold.q_hat
                         <= base_threshold.q_hat + lambda_)
        added = sets.membership & out_of_group & ~base_sets.membership
        added_bad = added.any(axis=1)
        groups_bad = anchored & (groups & ~base_groups).any(axis=1)
        weighted_bad = weighted_size(sets, eval_batch) > base_weighted

        rows.append({"lambda":                  lambda_,
                     "q_hat":                   base_threshold.q_hat,
                     "q_hat_lambda":            threshold.q_hat,
                     "quantile_bounds":         bounds_ok,
                     "out_of_group_violations": int(added_bad.sum()),
                     "group_violations":        int(groups_bad.sum()),
                     "weighted_violations":     int(weighted_bad.sum()),
                     "anchored_samples":        int(anchored.sum())})
        if counterexample is not None:
            continue
        if not bounds_ok:
            counterexample = {"property": "quantile_bounds",
                              "lambda": lambda_,
                              "q_hat": base_threshold.q_hat,
                              "q_hat_lambda": threshold.q_hat}
        elif added_bad.any():
            i = int(np.argmax(added_bad))
            counterexample = {"property": "out_of_group",
                              "lambda": lambda_, "sample": i,
                              "classes": np.flatnonzero(added[i]).tolist()}
        elif groups_bad.any():
            i = int(np.argmax(groups_bad))
            counterexample = {"property": "groups",
                              "lambda": lambda_, "sample": i,
                              "predicted_group":
                                  int(group_of[eval_batch.predicted[i]])}
        elif weighted_bad.any():
            i = int(np.argmax(weighted_bad))
            counterexample = {"property": "weighted_size",
                              "lambda": lambda_, "sample": i}
        if counterexample is not None:
            logger.warning("Exact property violated: %s", counterexample)

    table = pd.DataFrame(rows)
    return ExactPropertyReport(table=table,
                               n_sample_checks=len(table)
                               * eval_batch.n_samples,
                               counterexample=counterexample)


def marginal_cdf_check(data: SyntheticDataset,
                       score_kind: ScorerLike,
                       t_values: Optional[Sequence[float]] = None,
                       seed: int = 0) -> pd.DataFrame:
    """
    For z in {0, 1} compares the Monte Carlo conditional CDF
    F_z(t) = P(s(X, Y) <= t | Y in Y_z(X)) with
    (1 / p_z) · mean(p_z(x) · F̂_z^x(t)), where p_z(x) is the generator's
    per-sample in-group (out-of-group) label probability, p_z its mean and
    F̂_z^x the fraction of in-group (out-of-group) classes scoring at most t.
    The two agree when labels are uniform within Y_0(x) and Y_1(x).

    Without ``t_values`` the deciles 0.05 .. 0.95 of the label scores are
    used.
    """
    probs, labels, partition = _unpack(data)
    scorer = _scorer(score_kind)
    n = probs.shape[0]
    u = uniform_draws(seed, n, "calibration")
    scores = scorer.scores(probs, u)
    label_scores = scores[np.arange(n), labels]
    predicted_group = partition.group_of[np.argmax(probs, axis=1)]
    in_group = partition.group_of[None, :] == predicted_group[:, None]
    label_in_group = in_group[np.arange(n), labels]
    if t_values is None:
        t_values = np.quantile(label_scores, np.linspace(0.05, 0.95, 10))

    p0_x = np.asarray(data.in_group_prob, dtype=np.float64)
    rows = []
    for z, members, label_mask, p_x in ((0, in_group, label_in_group, p0_x),
                                        (1, ~in_group, ~label_in_group,
                                         1.0 - p0_x)):
        n_z = members.sum(axis=1)
        for t in t_values:
            hit = label_scores[label_mask] <= t
            lhs = float(hit.mean())
            quasi = ((scores <= t) & members).sum(axis=1) / n_z
            weighted = p_x * quasi / p_x.mean()
            rhs = float(weighted.mean())
            stderr = float(np.sqrt(lhs * (1.0 - lhs) / max(hit.size, 1)
                                   + weighted.var() / n))
            rows.append({"z": z, "t": float(t), "lhs": lhs, "rhs": rhs,
                         "stderr": stderr,
                         "within": abs(lhs - rhs)
                         <= NOISE_BAND * stderr + 1e-12})
    return pd.DataFrame(rows)


def _slope_run(config: SynthConfig,
               run: int,
               score_kind: ScorerLike,
               alpha: float,
               lambda_list: Sequence[float]) -> Dict[str, Any]:
    seed = config.seed ^ run
    data = generate(dataclasses.replace(config, seed=seed))
    estimates = estimate_size_curve(data, score_kind, None, alpha,
                                    lambda_list, seed)
    return {"run":             run,
            "seed":            seed,
            "slope":           estimates.slope,
            "derivative_sign": estimates.derivative_sign,
            "predicted_sign":  estimates.predicted_sign,
            "p0_hat":          estimates.p0_hat}


def slope_sign_frequency(config: SynthConfig,
                         score_kind: ScorerLike,
                         alpha: float,
                         lambda_list: Sequence[float],
                         runs: int,
                         n_jobs: int = 1,
                         progress: bool = False) -> pd.DataFrame:
    """
    Repeats :func:`estimate_size_curve` on ``runs`` freshly generated
    datasets, run ``r`` using seed ``config.seed XOR r``.
    """
    if runs < 1:
        raise ConfigError(f"need at least one run, got {runs}")
    rows = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_slope_run)(config, run, score_kind, alpha, lambda_list)
        for run in tqdm(range(runs), disable=not progress, desc="runs"))
    return pd.DataFrame(rows).sort_values("run").reset_index(drop=True)
