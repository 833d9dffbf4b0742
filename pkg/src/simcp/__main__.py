import dataclasses
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
import yaml

import simcp
from simcp import io
from simcp.api import PenaltyKind, ScoreKind
from simcp.app import App, Arg, Command
from simcp.conf import Config
from simcp.conformal.air import air_predict, air_scores
from simcp.conformal.engine import calibrate, calibrate_softmax, \
    predict_sets, score_batch
from simcp.conformal.tuning import LambdaGrid, tune_lambda
from simcp.data import CalibrationConfig, ClassPartition, ConfigError, \
    DataError, LabelVector, SimilarityMatrix, SoftmaxMatrix, validate_softmax
from simcp.evaluation.metrics import class_coverage, evaluate
from simcp.evaluation.trials import MethodConfig, TrialProtocol, run_trials
from simcp.scoring import ScoreFunction, uniform_draws
from simcp.similarity import PenaltySource, similarity_from_features
from simcp.theory.synth import SynthConfig, generate, generate_features
from simcp.theory.verify import estimate_size_curve, marginal_cdf_check, \
    slope_sign_frequency, verify_exact_properties

SCORES = [kind.value for kind in ScoreKind]
PENALTIES = [kind.value for kind in PenaltyKind]
SCORE_PARAMS = ("k_reg", "lambda_raps", "lambda_saps")
THEORY_LAMBDAS = "0,0.01,0.02,0.03,0.05,0.1,0.2,0.5"


# Command decoration updates its Args in place; build fresh ones per command
def score_arg() -> Arg:
    return Arg(dest="score", choices=SCORES, help="Nonconformity score")


def penalty_arg() -> Arg:
    return Arg(dest="penalty", choices=PENALTIES,
               help="Class-similarity penalty (air runs the superclass "
                    "baseline)")


def input_args() -> List[Arg]:
    return [Arg(dest="partition",
                help="class_id,group_id csv (ma and air penalties)"),
            Arg(dest="similarity",
                help="CxC similarity matrix (ms penalty)"),
            Arg(dest="features",
                help="Feature matrix used to build the similarity matrix "
                     "when --similarity is not given")]


def lambda_grid_arg() -> Arg:
    return Arg(dest="lambda_grid",
               help="'default' or comma separated lambda values including 0")


class ConformalApp(App):
    __description__ = 'Class-similarity regularized conformal prediction'
    __version__ = simcp.__version__

    def __init__(self):
        super().__init__()
        self.out: Optional[Path] = None
        self.seed: int = Config["seed"]
        self.n_jobs: int = Config["threads"]
        self.add_global_argument([
            Arg(dest='out',
                option_names=['--out'],
                help="Directory receiving the outputs and manifest.yml",
                type=str,
                default="."),
            Arg(dest='seed',
                option_names=['--seed'],
                help="Seed every random draw derives from",
                type=int,
                default=Config["seed"]),
            Arg(dest='threads',
                option_names=['--threads'],
                help="Worker pool size (default: $CP_THREADS or 1)",
                type=int,
                default=None)
        ])

    def setup(self) -> None:
        self.out = Path(self.parsed_global_args["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = int(self.parsed_global_args["seed"])
        threads = self.parsed_global_args["threads"]
        if threads is None:
            try:
                threads = int(os.environ.get("CP_THREADS", Config["threads"]))
            except ValueError:
                raise ConfigError(f"CP_THREADS must be an integer, got "
                                  f"'{os.environ['CP_THREADS']}'")
        if threads < 1:
            raise ConfigError(f"thread count must be >= 1, got {threads}")
        self.n_jobs = threads

    def complete(self,
                 command: str,
                 arguments: Dict[str, Any]) -> None:
        manifest = {
            "command":   command,
            "version":   self.__version__,
            "arguments": {**arguments, "seed": self.seed},
        }
        path = self.out / "manifest.yml"
        with open(path, "w") as fp:
            yaml.safe_dump(manifest, fp, sort_keys=True,
                           default_flow_style=False)
        self.logger.info("Wrote %s", path)

    def _softmax(self,
                 path: str) -> SoftmaxMatrix:
        return validate_softmax(io.load_matrix(path))

    def _labels(self,
                path: str,
                softmax: SoftmaxMatrix) -> LabelVector:
        labels = io.load_labels(path, softmax.n_classes)
        if len(labels) != softmax.n_samples:
            raise DataError(f"{path}: {len(labels)} labels for "
                            f"{softmax.n_samples} softmax rows")
        return labels

    def _scorer(self,
                score: str,
                **params) -> ScoreFunction:
        return ScoreKind(score).create(**params)

    def _penalty(self,
                 penalty: str,
                 n_classes: int,
                 partition: Optional[str],
                 similarity: Optional[str],
                 features: Optional[str],
                 feature_labels: Optional[str]) \
            -> Tuple[PenaltyKind, Optional[PenaltySource],
                     Optional[ClassPartition]]:
        kind = PenaltyKind(penalty)
        groups = io.load_partition(partition, n_classes) \
            if partition is not None else None
        matrix = None
        if kind is PenaltyKind.MS:
            if similarity is not None:
                matrix = SimilarityMatrix(io.load_matrix(similarity))
            elif features is not None:
                if feature_labels is None:
                    raise ConfigError("--features needs --feature-labels")
                matrix = similarity_from_features(
                    io.load_features(features, feature_labels), n_classes)
        return kind, kind.source(groups, matrix), groups

    def _threshold_metadata(self,
                            score: str,
                            penalty: str,
                            scorer: ScoreFunction) -> Dict[str, Any]:
        return {"score_kind":   score,
                "penalty_kind": penalty,
                "seed":         self.seed,
                **scorer.params}

    @Command(help="Calibrate a conformal threshold on a calibration split",
             args=[score_arg(), penalty_arg()] + input_args())
    def calibrate(self,
                  softmax: str,
                  labels: str,
                  score: str = "lac",
                  penalty: str = "none",
                  alpha: float = Config["alpha"],
                  lambda_: float = 0.0,
                  partition: str = None,
                  similarity: str = None,
                  features: str = None,
                  feature_labels: str = None,
                  k_reg: int = Config["raps.k_reg"],
                  lambda_raps: float = Config["raps.lambda_raps"],
                  lambda_saps: float = Config["saps.lambda_saps"]):
        config = CalibrationConfig(alpha, self.seed, lambda_)
        probs = self._softmax(softmax)
        label_vector = self._labels(labels, probs)
        scorer = self._scorer(score, k_reg=k_reg, lambda_raps=lambda_raps,
                              lambda_saps=lambda_saps)
        kind, source, groups = self._penalty(penalty, probs.n_classes,
                                             partition, similarity, features,
                                             feature_labels)
        if kind is PenaltyKind.AIR:
            threshold = calibrate(air_scores(probs, label_vector, groups),
                                  config.alpha)
        else:
            if not kind.is_penalized:
                config = dataclasses.replace(config, lambda_=0.0)
            threshold = calibrate_softmax(probs, label_vector, scorer, source,
                                          config)
        self.logger.info("q_hat=%.6f over %d calibration samples (%s, %s)",
                         threshold.q_hat, threshold.n_cal, scorer.name,
                         kind.method_name)
        io.write_threshold(self.out / "threshold.csv", threshold,
                           **self._threshold_metadata(score, penalty, scorer))

    @Command(help="Build prediction sets for test softmax rows from a "
                  "calibrated threshold",
             args=input_args())
    def predict(self,
                softmax: str,
                threshold: str,
                partition: str = None,
                similarity: str = None,
                features: str = None,
                feature_labels: str = None):
        probs = self._softmax(softmax)
        calibrated, metadata = io.load_threshold(threshold)
        score = str(metadata.get("score_kind", "lac"))
        penalty = str(metadata.get("penalty_kind", "none"))
        params = {k: metadata[k] for k in SCORE_PARAMS
                  if k in metadata and not pd.isna(metadata[k])}
        if "k_reg" in params:
            params["k_reg"] = int(params["k_reg"])
        scorer = self._scorer(score, **params)
        kind, source, groups = self._penalty(penalty, probs.n_classes,
                                             partition, similarity, features,
                                             feature_labels)
        if kind is PenaltyKind.AIR:
            sets = air_predict(probs, calibrated, groups)
        else:
            batch = score_batch(probs, scorer, source,
                                uniform_draws(self.seed, probs.n_samples,
                                              "test"))
            sets = predict_sets(batch, calibrated)
        empty = float((sets.sizes == 0).mean())
        if empty > calibrated.alpha:
            self.logger.warning("%.1f%% of the prediction sets are empty",
                                100 * empty)
        io.write_sets(self.out / "sets.csv", sets)

    @Command(help="Evaluate prediction sets against the true labels",
             args=input_args()[:1])
    def evaluate(self,
                 sets: str,
                 labels: str,
                 alpha: float = Config["alpha"],
                 partition: str = None,
                 n_classes: int = None):
        groups = io.load_partition(partition, n_classes) \
            if partition is not None else None
        if n_classes is None and groups is not None:
            n_classes = groups.n_classes
        label_vector = io.load_labels(labels, n_classes)
        prediction_sets = io.load_sets(sets, n_classes)
        if n_classes is None \
                and label_vector.labels.max() >= prediction_sets.n_classes:
            prediction_sets = io.load_sets(
                sets, int(label_vector.labels.max()) + 1)
        report = evaluate(prediction_sets, label_vector, groups, alpha)
        self.logger.info("avg size %.4f, coverage %.4f, TopCovGap %.4f",
                         report.avg_size, report.marginal_coverage,
                         report.top_cov_gap)
        io.write_table(self.out / "metrics.csv",
                       pd.DataFrame([{**report.as_dict(), "alpha": alpha}]))
        io.write_table(self.out / "class_coverage.csv",
                       class_coverage(prediction_sets, label_vector.labels),
                       index=True)

    @Command(help="Select the penalty weight lambda on a calibration split",
             args=[score_arg(), penalty_arg(), lambda_grid_arg()]
                  + input_args())
    def tune_lambda(self,
                    softmax: str,
                    labels: str,
                    score: str = "lac",
                    penalty: str = "ma",
                    alpha: float = Config["alpha"],
                    lambda_grid: str = "default",
                    partition: str = None,
                    similarity: str = None,
                    features: str = None,
                    feature_labels: str = None,
                    k_reg: int = Config["raps.k_reg"],
                    lambda_raps: float = Config["raps.lambda_raps"],
                    lambda_saps: float = Config["saps.lambda_saps"]):
        probs = self._softmax(softmax)
        label_vector = self._labels(labels, probs)
        scorer = self._scorer(score, k_reg=k_reg, lambda_raps=lambda_raps,
                              lambda_saps=lambda_saps)
        kind, source, groups = self._penalty(penalty, probs.n_classes,
                                             partition, similarity, features,
                                             feature_labels)
        if not kind.is_penalized:
            raise ConfigError(f"--penalty {penalty} has no lambda to tune")
        report = tune_lambda(probs, label_vector, LambdaGrid.parse(lambda_grid),
                             scorer, source, alpha, self.seed, groups)
        self.logger.info("Chose lambda=%g (avg size %.4f, %.4f at lambda=0)",
                         report.chosen_lambda,
                         report.size_at(report.chosen_lambda),
                         report.size_at(0.0))
        io.write_table(self.out / "tuning.csv", report.table)
        io.write_threshold(self.out / "threshold.csv", report.threshold,
                           **self._threshold_metadata(score, penalty, scorer))

    @Command(help="Cosine similarity matrix of centered class-mean features")
    def similarity(self,
                   features: str,
                   feature_labels: str,
                   n_classes: int = None,
                   emit_csv: bool = False):
        matrix = similarity_from_features(
            io.load_features(features, feature_labels), n_classes)
        io.write_matrix(self.out / "similarity.cpm", matrix.values)
        if emit_csv:
            io.write_matrix(self.out / "similarity.csv", matrix.values)
        self.logger.info("Wrote %dx%d similarity matrix", matrix.n_classes,
                         matrix.n_classes)

    @Command(help="Generate a synthetic grouped classification dataset")
    def synth(self,
              groups: int = 10,
              group_size: int = 5,
              samples: int = 100_000,
              p0: float = 0.9,
              concentration: float = 2.0,
              in_group_shift: float = 2.0,
              noise_scale: float = 1.0,
              margin_weight: float = 0.0,
              feature_samples: int = 20,
              feature_dim: int = 16):
        data = generate(SynthConfig(n_groups=groups, group_size=group_size,
                                    n_samples=samples, in_group_mass=p0,
                                    concentration=concentration,
                                    seed=self.seed,
                                    in_group_shift=in_group_shift,
                                    noise_scale=noise_scale,
                                    margin_weight=margin_weight))
        features = generate_features(data.partition,
                                     samples_per_class=feature_samples,
                                     dim=feature_dim, seed=self.seed)
        io.write_matrix(self.out / "softmax.cpm", data.softmax.values)
        io.write_labels(self.out / "labels.txt", data.labels)
        io.write_partition(self.out / "partition.csv", data.partition)
        io.write_matrix(self.out / "features.cpm", features.values)
        io.write_labels(self.out / "feature_labels.txt", features.labels)
        self.logger.info("Wrote %d samples over %d classes to %s",
                         data.n_samples, data.partition.n_classes, self.out)

    @Command(help="Check the size-curve sign condition and the exact "
                  "penalty properties on synthetic data",
             args=[score_arg(), lambda_grid_arg()])
    def verify_theory(self,
                      groups: int = 10,
                      group_size: int = 5,
                      samples: int = 100_000,
                      p0: float = 0.9,
                      concentration: float = 2.0,
                      margin_weight: float = 0.0,
                      score: str = "lac",
                      alpha: float = Config["alpha"],
                      lambda_grid: str = THEORY_LAMBDAS,
                      runs: int = 0,
                      k_reg: int = Config["raps.k_reg"],
                      lambda_raps: float = Config["raps.lambda_raps"],
                      lambda_saps: float = Config["saps.lambda_saps"]):
        config = SynthConfig(n_groups=groups, group_size=group_size,
                             n_samples=samples, in_group_mass=p0,
                             concentration=concentration, seed=self.seed,
                             margin_weight=margin_weight)
        data = generate(config)
        scorer = self._scorer(score, k_reg=k_reg, lambda_raps=lambda_raps,
                              lambda_saps=lambda_saps)
        lambdas = LambdaGrid.parse(lambda_grid).values
        source = PenaltySource.binary(data.partition)

        estimates = estimate_size_curve(data, scorer, source, alpha, lambdas,
                                        self.seed, n_jobs=self.n_jobs)
        exact = verify_exact_properties(data, scorer, source, alpha, lambdas,
                                        self.seed)
        cdf = marginal_cdf_check(data, scorer, seed=self.seed)

        report = {
            "generator": {"n_groups": groups, "group_size": group_size,
                          "n_samples": samples, "in_group_mass": p0,
                          "concentration": concentration,
                          "in_group_shift": config.in_group_shift,
                          "noise_scale": config.noise_scale,
                          "margin_weight": margin_weight,
                          "synthetic": True},
            "score": scorer.name,
            "alpha": alpha,
            "p0_hat": estimates.p0_hat,
            "p1_hat": estimates.p1_hat,
            "n0_bar": estimates.n0_bar,
            "n1_bar": estimates.n1_bar,
            "slope": estimates.slope,
            "derivative_sign": estimates.derivative_sign,
            "predicted_sign": estimates.predicted_sign,
            "exact_properties_passed": exact.passed,
            "exact_sample_checks": int(exact.n_sample_checks),
            "counterexample": exact.counterexample,
            "marginal_cdf_within": bool(cdf["within"].all()),
        }
        if runs > 0:
            frequency = slope_sign_frequency(config, scorer, alpha, lambdas,
                                             runs, n_jobs=self.n_jobs)
            io.write_table(self.out / "slope_runs.csv", frequency)
            report["runs"] = runs
            report["negative_slope_runs"] = int(
                (frequency["derivative_sign"] < 0).sum())
            report["positive_slope_runs"] = int(
                (frequency["derivative_sign"] > 0).sum())

        io.write_table(self.out / "size_curve.csv", estimates.size_curve)
        io.write_table(self.out / "exact_properties.csv", exact.table)
        io.write_table(self.out / "marginal_cdf.csv", cdf)
        with open(self.out / "theory.yml", "w") as fp:
            yaml.safe_dump(report, fp, sort_keys=True,
                           default_flow_style=False)
        self.logger.info("predicted sign %d, measured sign %d, exact "
                         "properties %s", estimates.predicted_sign,
                         estimates.derivative_sign,
                         "hold" if exact.passed else "FAIL")

    @Command(help="Repeat random calibration/test splits and aggregate the "
                  "metrics",
             args=[score_arg(), penalty_arg(), lambda_grid_arg(),
                   Arg(dest="lambda_",
                       help="Fixed lambda; tuned on each calibration split "
                            "when omitted")] + input_args())
    def run_trials(self,
                   softmax: str,
                   labels: str,
                   score: str = "lac",
                   penalty: str = "none",
                   alpha: float = Config["alpha"],
                   lambda_: float = None,
                   lambda_grid: str = "default",
                   trials: int = Config["trials"],
                   cal_fraction: float = Config["cal_fraction"],
                   partition: str = None,
                   similarity: str = None,
                   features: str = None,
                   feature_labels: str = None,
                   k_reg: int = Config["raps.k_reg"],
                   lambda_raps: float = Config["raps.lambda_raps"],
                   lambda_saps: float = Config["saps.lambda_saps"],
                   progress: bool = False):
        probs = self._softmax(softmax)
        label_vector = self._labels(labels, probs)
        scorer = self._scorer(score, k_reg=k_reg, lambda_raps=lambda_raps,
                              lambda_saps=lambda_saps)
        kind, source, groups = self._penalty(penalty, probs.n_classes,
                                             partition, similarity, features,
                                             feature_labels)
        method = MethodConfig(scorer=scorer, penalty=kind, alpha=alpha,
                              source=source if kind.is_penalized else None,
                              partition=groups, lambda_=lambda_,
                              grid=LambdaGrid.parse(lambda_grid))
        aggregate = run_trials(probs, label_vector,
                               TrialProtocol(n_trials=trials,
                                             cal_fraction=cal_fraction,
                                             seed=self.seed),
                               method, n_jobs=self.n_jobs, progress=progress)
        self.logger.info("%s/%s over %d trials: avg size %.4f, coverage %.4f",
                         method.name, scorer.name, aggregate.n_trials,
                         aggregate.mean("avg_size"),
                         aggregate.mean("coverage"))
        io.write_table(self.out / "trials.csv", aggregate.trials)
        io.write_table(self.out / "summary.csv", aggregate.summary)


def main(argv: Optional[Sequence[str]] = None) -> int:
    return ConformalApp().run(argv)


def run():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
