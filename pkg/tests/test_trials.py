import numpy as np
import pytest

from simcp.api import PenaltyKind
from simcp.conformal.tuning import LambdaGrid
from simcp.data import ConfigError
from simcp.evaluation.trials import MethodConfig, TrialProtocol, \
    run_trials, split_indices
from simcp.scoring.baselines import LacScore, RapsScore
from simcp.similarity import PenaltySource, similarity_from_features
from simcp.theory.synth import generate_features

from conftest import random_labels, random_softmax

GRID = LambdaGrid.parse("0,0.01,0.02,0.05,0.1,0.2,0.5,1")


def _standard(alpha=0.1):
    return MethodConfig(scorer=LacScore(), alpha=alpha)


def test_split_sizes():
    cal, test = split_indices(10_000, 0.2, seed=4)
    assert cal.shape[0] == 2000 and test.shape[0] == 8000
    assert np.intersect1d(cal, test).size == 0


def test_single_trial_has_zero_std(coverage_data):
    result = run_trials(coverage_data.softmax, coverage_data.labels,
                        TrialProtocol(n_trials=1, seed=3), _standard())
    assert result.n_trials == 1
    assert result.std("avg_size") == 0.0
    assert result.std("coverage") == 0.0


def test_same_seed_same_results(coverage_data):
    protocol = TrialProtocol(n_trials=3, seed=11)
    first = run_trials(coverage_data.softmax, coverage_data.labels, protocol,
                       _standard())
    second = run_trials(coverage_data.softmax, coverage_data.labels, protocol,
                        _standard())
    assert first.trials.equals(second.trials)


def test_results_do_not_depend_on_workers(coverage_data):
    protocol = TrialProtocol(n_trials=4, seed=5)
    method = MethodConfig(scorer=RapsScore(), penalty=PenaltyKind.MA,
                          source=PenaltySource.binary(coverage_data.partition),
                          grid=GRID)
    serial = run_trials(coverage_data.softmax, coverage_data.labels, protocol,
                        method, n_jobs=1)
    threaded = run_trials(coverage_data.softmax, coverage_data.labels,
                          protocol, method, n_jobs=2)
    assert serial.trials.equals(threaded.trials)


def _check_coverage(data, alpha, n_trials, method=None):
    protocol = TrialProtocol(n_trials=n_trials, cal_fraction=0.2, seed=0)
    method = _standard(alpha) if method is None else method
    result = run_trials(data.softmax, data.labels, protocol, method)
    n_cal = int(round(0.2 * data.n_samples))
    mean = result.mean("coverage")
    assert 1 - alpha - 0.01 <= mean <= 1 - alpha + 1 / (n_cal + 1) + 0.01


def _tuned_ma(data, alpha):
    return MethodConfig(scorer=LacScore(), penalty=PenaltyKind.MA,
                        alpha=alpha, partition=data.partition, grid=GRID,
                        source=PenaltySource.binary(data.partition))


@pytest.mark.parametrize("alpha", [0.05, 0.1])
def test_standard_coverage(coverage_data, alpha):
    _check_coverage(coverage_data, alpha, n_trials=20)


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.05, 0.1])
def test_standard_coverage_full_protocol(coverage_data, alpha):
    _check_coverage(coverage_data, alpha, n_trials=100)


@pytest.mark.parametrize("alpha", [0.05, 0.1])
def test_tuned_penalty_keeps_coverage(coverage_data, alpha):
    _check_coverage(coverage_data, alpha, n_trials=20,
                    method=_tuned_ma(coverage_data, alpha))


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.05, 0.1])
def test_tuned_penalty_keeps_coverage_full_protocol(coverage_data, alpha):
    _check_coverage(coverage_data, alpha, n_trials=100,
                    method=_tuned_ma(coverage_data, alpha))


def test_tuning_needs_a_large_enough_split(rng, three_class_partition):
    softmax = random_softmax(rng, 10, 3)
    labels = random_labels(rng, 10, 3)
    method = MethodConfig(scorer=LacScore(), penalty=PenaltyKind.MA,
                          source=PenaltySource.binary(three_class_partition))
    with pytest.raises(ConfigError, match="too small"):
        run_trials(softmax, labels, TrialProtocol(n_trials=1,
                                                  cal_fraction=0.2), method)


def test_method_validation(three_class_partition):
    with pytest.raises(ConfigError):
        MethodConfig(scorer=LacScore(), penalty=PenaltyKind.MS)
    with pytest.raises(ConfigError):
        MethodConfig(scorer=LacScore(), penalty=PenaltyKind.AIR)
    with pytest.raises(ConfigError):
        TrialProtocol(n_trials=0)
    with pytest.raises(ConfigError):
        TrialProtocol(cal_fraction=1.0)


def test_fixed_lambda_is_reported(coverage_data):
    method = MethodConfig(scorer=LacScore(), penalty=PenaltyKind.MA,
                          source=PenaltySource.binary(coverage_data.partition),
                          lambda_=0.1)
    result = run_trials(coverage_data.softmax, coverage_data.labels,
                        TrialProtocol(n_trials=2), method)
    assert result.mean("lambda") == pytest.approx(0.1)
    assert set(result.trials["method"]) == {"MA-CS"}


def _soft_vs_diagonal(data, n_trials):
    similarity = similarity_from_features(generate_features(data.partition))
    protocol = TrialProtocol(n_trials=n_trials, seed=1)
    soft = run_trials(data.softmax, data.labels, protocol, MethodConfig(
        scorer=RapsScore(), penalty=PenaltyKind.MS,
        source=PenaltySource.soft(similarity), partition=data.partition,
        grid=GRID))
    diagonal = run_trials(data.softmax, data.labels, protocol, MethodConfig(
        scorer=RapsScore(), penalty=PenaltyKind.DIAG,
        source=PenaltySource.diagonal(), partition=data.partition,
        grid=GRID))
    return (soft.trials["avg_size"].to_numpy()
            <= diagonal.trials["avg_size"].to_numpy() + 1e-12)


def test_soft_penalty_beats_diagonal(coverage_data):
    assert _soft_vs_diagonal(coverage_data, 10).sum() >= 9


@pytest.mark.slow
def test_soft_penalty_beats_diagonal_full_protocol(coverage_data):
    assert _soft_vs_diagonal(coverage_data, 100).sum() >= 90
