"""
Class-similarity regularized conformal prediction.

Builds split-conformal prediction sets from precomputed softmax outputs,
with penalized scores that push out-of-group labels above the calibrated
threshold, plus the baselines, tuning, metrics and synthetic checks that
go with them.
"""
import sys

if sys.version_info[:2] >= (3, 8):
    from importlib.metadata import PackageNotFoundError, version  # pragma: no cover
else:
    from importlib_metadata import PackageNotFoundError, version  # pragma: no cover

try:
    dist_name = "simcp"
    __version__ = version(dist_name)
except PackageNotFoundError:  # pragma: no cover
    __version__ = "unknown"
finally:
    del version, PackageNotFoundError
