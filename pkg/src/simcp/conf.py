from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import yaml
from dotenv import dotenv_values

from simcp.data import ConfigError

Config: Dict[str, Any] = {
    "Score.lac":
        "simcp.scoring.baselines.LacScore",
    "Score.raps":
        "simcp.scoring.baselines.RapsScore",
    "Score.saps":
        "simcp.scoring.baselines.SapsScore",

    "raps.k_reg":        1,
    "raps.lambda_raps":  0.01,
    "saps.lambda_saps":  0.08,

    "alpha":             0.1,
    "cal_fraction":      0.2,
    "trials":            100,
    "seed":              0,
    "threads":           1,

    "lambda_grid": {
        "low":    1e-3,
        "high":   2.0,
        "points": 30
    },

    # SeedSequence stream ids; every draw is SeedSequence([seed, stream])
    "streams": {
        "calibration": 1,
        "test":        2,
        "tuning":      3,
        "split":       4,
        "synthetic":   5,
        "features":    6
    }
}


def default_lambda_grid() -> np.ndarray:
    """
    :return: 0 followed by log-spaced points in [low, high]
    """
    grid = Config["lambda_grid"]
    return np.concatenate(([0.0], np.geomspace(grid["low"], grid["high"],
                                                grid["points"])))


def stream(name: str) -> int:
    return Config["streams"][name]


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Reads a run configuration. YAML files (``.yml``/``.yaml``, including run
    manifests) keep their value types; anything else is parsed as
    ``key=value`` lines and yields strings. Keys may be written with dashes
    or underscores.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix.lower() in (".yml", ".yaml"):
        with open(path) as fp:
            doc = yaml.safe_load(fp) or dict()
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        values = doc.get("arguments", doc)
    else:
        values = dotenv_values(path)
    return {str(key).replace("-", "_"): value for key, value in values.items()}
