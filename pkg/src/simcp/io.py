"""
Reading and writing of matrices, labels, partitions, thresholds and
prediction-set files.

Binary matrices use the ``CPM1`` layout: 4 magic bytes, little-endian u32
rows, u32 cols, a u8 dtype tag (0 = float32, 1 = float64) and a row-major
little-endian payload. CSV matrices have no header and one row per line.
"""
import logging
import struct
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from simcp.data import CalibratedThreshold, ClassPartition, DataError, \
    FeatureMatrix, FormatError, LabelVector, PredictionSets

PathLike = Union[str, Path]

MAGIC = b"CPM1"
HEADER_PATTERN = "<4sIIB"
HEADER_SIZE = struct.calcsize(HEADER_PATTERN)
DTYPE_TAGS = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
}
TAG_FOR_DTYPE = {dtype: tag for tag, dtype in DTYPE_TAGS.items()}

logger = logging.getLogger(__name__)


def matrix_format(path: PathLike) -> str:
    """
    Infers the matrix format from the file suffix: ``.csv`` is csv, anything
    else is binary.
    """
    return "csv" if Path(path).suffix.lower() == ".csv" else "binary"


@contextmanager
def _reading(path: PathLike):
    """
    Reports a missing, unreadable or undecodable input file as a FormatError
    naming the path.
    """
    try:
        yield
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: not UTF-8 text ({e.reason} at byte "
                          f"{e.start})")
    except OSError as e:
        raise FormatError(f"{path}: cannot read ({e.strerror or e})")


def _check_finite(values: np.ndarray,
                  path: PathLike) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        row, col = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: non-finite value at row {row}, column {col}")
    return values


def _read_binary(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fp:
        header = fp.read(HEADER_SIZE)
        if len(header) != HEADER_SIZE:
            raise FormatError(f"{path}: truncated header")
        magic, rows, cols, tag = struct.unpack(HEADER_PATTERN, header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if rows == 0 or cols == 0:
            raise FormatError(f"{path}: degenerate shape {rows}x{cols}")
        if tag not in DTYPE_TAGS:
            raise FormatError(f"{path}: unknown dtype tag {tag}")
        dtype = DTYPE_TAGS[tag]
        payload = fp.read()
    expected = rows * cols * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: header declares {rows}x{cols} "
                          f"({expected} bytes) but payload has "
                          f"{len(payload)} bytes")
    values = np.frombuffer(payload, dtype=dtype).reshape(rows, cols)
    return values.astype(np.float64)


def _read_csv(path: PathLike) -> np.ndarray:
    try:
        df = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                         skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path}: empty csv matrix")
    except pd.errors.ParserError as e:
        raise FormatError(f"{path}: ragged csv matrix ({e})")
    cells = df.apply(lambda column: column.str.strip())
    missing = (cells.isna() | (cells == "")).to_numpy()
    if missing.any():
        row = int(np.argwhere(missing)[0, 0])
        raise FormatError(f"{path}: row {row} has fewer columns than "
                          f"{df.shape[1]}")
    try:
        return cells.to_numpy().astype(np.float64)
    except ValueError as e:
        raise FormatError(f"{path}: unparseable value ({e})")


def load_matrix(path: PathLike,
                format: Optional[str] = None) -> np.ndarray:
    """
    Loads a dense float64 matrix.

    :param path: the file to read
    :param format: ``binary`` or ``csv``; inferred from the suffix when None
    :raises FormatError: missing or undecodable file, wrong magic,
                         degenerate or mismatched shape
    :raises DataError: non-finite values
    """
    format = matrix_format(path) if format is None else format.lower()
    with _reading(path):
        if format == "binary":
            values = _read_binary(path)
        elif format == "csv":
            values = _read_csv(path)
        else:
            raise FormatError(f"unknown matrix format '{format}'")
    logger.debug("Loaded %dx%d matrix from %s", *values.shape, path)
    return _check_finite(values, path)


def write_matrix(path: PathLike,
                 matrix: np.ndarray,
                 format: Optional[str] = None,
                 dtype: Union[str, np.dtype] = "<f8") -> Path:
    path = Path(path)
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or 0 in matrix.shape:
        raise FormatError(f"cannot write matrix of shape {matrix.shape}")
    format = matrix_format(path) if format is None else format.lower()
    if format == "binary":
        dtype = np.dtype(dtype).newbyteorder("<")
        if dtype not in TAG_FOR_DTYPE:
            raise FormatError(f"unsupported dtype {dtype}")
        with open(path, "wb") as fp:
            fp.write(struct.pack(HEADER_PATTERN, MAGIC, matrix.shape[0],
                                 matrix.shape[1], TAG_FOR_DTYPE[dtype]))
            fp.write(np.ascontiguousarray(matrix, dtype=dtype).tobytes())
    elif format == "csv":
        pd.DataFrame(matrix).to_csv(path, header=False, index=False,
                                    float_format="%.17g")
    else:
        raise FormatError(f"unknown matrix format '{format}'")
    return path


def load_labels(path: PathLike,
                n_classes: Optional[int] = None) -> LabelVector:
    try:
        with _reading(path):
            df = pd.read_csv(path, header=None, dtype=str,
                             keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path}: empty label file")
    except pd.errors.ParserError as e:
        raise FormatError(f"{path}: expected one label per line ({e})")
    if df.shape[1] != 1:
        raise FormatError(f"{path}: expected one label per line, "
                          f"got {df.shape[1]} columns")
    try:
        labels = df[0].str.strip().astype(np.int64).to_numpy()
    except ValueError as e:
        raise FormatError(f"{path}: labels must be integers ({e})")
    return LabelVector(labels, n_classes)


def write_labels(path: PathLike,
                 labels: Union[LabelVector, np.ndarray]) -> Path:
    values = labels.labels if isinstance(labels, LabelVector) else labels
    pd.Series(np.asarray(values, dtype=np.int64)).to_csv(path, header=False,
                                                         index=False)
    return Path(path)


def load_partition(path: PathLike,
                   n_classes: Optional[int] = None) -> ClassPartition:
    """
    Loads a ``class_id,group_id`` csv into a ClassPartition.

    :raises FormatError: duplicated or missing classes, malformed rows
    """
    try:
        with _reading(path):
            df = pd.read_csv(path, header=None, index_col=False, dtype=str,
                             keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path}: empty partition file")
    except pd.errors.ParserError as e:
        raise FormatError(f"{path}: malformed partition ({e})")
    if df.shape[1] != 2:
        raise FormatError(f"{path}: expected class_id,group_id rows, got "
                          f"{df.shape[1]} columns")
    df.columns = ["class_id", "group_id"]
    try:
        df = df.apply(lambda column: column.str.strip()).astype(np.int64)
    except ValueError as e:
        raise FormatError(f"{path}: class and group ids must be integers ({e})")
    duplicated = df["class_id"][df["class_id"].duplicated()]
    if not duplicated.empty:
        raise FormatError(f"{path}: class {int(duplicated.iloc[0])} appears "
                          f"more than once")
    if (df < 0).to_numpy().any():
        raise FormatError(f"{path}: negative class or group id")
    n_classes = int(df["class_id"].max()) + 1 if n_classes is None \
        else n_classes
    missing = np.setdiff1d(np.arange(n_classes), df["class_id"].to_numpy())
    if missing.size:
        raise FormatError(f"{path}: class {int(missing[0])} is missing")
    if df["class_id"].max() >= n_classes:
        raise FormatError(f"{path}: class {int(df['class_id'].max())} is "
                          f"outside [0, {n_classes})")
    group_of = df.sort_values("class_id")["group_id"].to_numpy()
    try:
        return ClassPartition(group_of)
    except DataError as e:
        raise FormatError(f"{path}: {e}")


def write_partition(path: PathLike,
                    partition: ClassPartition) -> Path:
    pd.DataFrame({
        "class_id": np.arange(partition.n_classes),
        "group_id": partition.group_of
    }).to_csv(path, header=False, index=False)
    return Path(path)


def load_features(path: PathLike,
                  labels_path: PathLike,
                  format: Optional[str] = None) -> FeatureMatrix:
    values = load_matrix(path, format)
    labels = load_labels(labels_path)
    if len(labels) != values.shape[0]:
        raise FormatError(f"{labels_path}: {len(labels)} labels for "
                          f"{values.shape[0]} feature rows in {path}")
    return FeatureMatrix(values, labels)


THRESHOLD_COLUMNS = ["q_hat", "alpha", "n_cal", "lambda", "score_kind",
                     "penalty_kind", "seed"]


def write_threshold(path: PathLike,
                    threshold: CalibratedThreshold,
                    **metadata: Any) -> Path:
    """
    Persists a threshold as a one-row csv. Metadata (score_kind,
    penalty_kind, seed and score hyperparameters) is written after the core
    columns.
    """
    row = {
        "q_hat":  threshold.q_hat,
        "alpha":  threshold.alpha,
        "n_cal":  threshold.n_cal,
        "lambda": threshold.lambda_,
    }
    row.update(metadata)
    columns = [c for c in THRESHOLD_COLUMNS if c in row] + \
              sorted(c for c in row if c not in THRESHOLD_COLUMNS)
    pd.DataFrame([row], columns=columns).to_csv(path, index=False,
                                                float_format="%.17g")
    return Path(path)


def load_threshold(path: PathLike) -> Tuple[CalibratedThreshold,
                                            Dict[str, Any]]:
    try:
        with _reading(path):
            df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path}: empty threshold file")
    if len(df) != 1 or not {"q_hat", "alpha", "n_cal", "lambda"} <= set(
            df.columns):
        raise FormatError(f"{path}: not a threshold file")
    row = df.iloc[0].to_dict()
    threshold = CalibratedThreshold(q_hat=float(row.pop("q_hat")),
                                    alpha=float(row.pop("alpha")),
                                    n_cal=int(row.pop("n_cal")),
                                    lambda_=float(row.pop("lambda")))
    return threshold, row


def write_sets(path: PathLike,
               sets: PredictionSets) -> Path:
    pd.DataFrame({
        "sample":          np.arange(len(sets)),
        "predicted_class": sets.predicted,
        "size":            sets.sizes,
        "classes":         [" ".join(str(c) for c in np.flatnonzero(row))
                            for row in sets.membership]
    }).to_csv(path, index=False)
    return Path(path)


def load_sets(path: PathLike,
              n_classes: Optional[int] = None) -> PredictionSets:
    """
    :param n_classes: width of the membership matrix; defaults to one past
                      the largest class or predicted class in the file
    """
    try:
        with _reading(path):
            df = pd.read_csv(path, dtype={"classes": str},
                             keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path}: empty prediction-set file")
    if not {"predicted_class", "classes"} <= set(df.columns):
        raise FormatError(f"{path}: not a prediction-set file")
    try:
        rows = [[int(c) for c in classes.split()] for classes in df["classes"]]
    except ValueError:
        raise FormatError(f"{path}: classes must be space separated integers")
    if n_classes is None:
        n_classes = max([int(df["predicted_class"].max()) + 1 if len(df)
                         else 1] + [max(r) + 1 for r in rows if r])
    membership = np.zeros((len(df), n_classes), dtype=bool)
    for i, members in enumerate(rows):
        if members and max(members) >= n_classes:
            raise FormatError(f"{path}: row {i} holds class {max(members)} "
                              f"outside [0, {n_classes})")
        membership[i, members] = True
    return PredictionSets(membership, df["predicted_class"].to_numpy())


def write_table(path: PathLike,
                table: pd.DataFrame,
                index: bool = False) -> Path:
    """
    Writes a result table with full float precision so reruns compare
    byte-equal.
    """
    table.to_csv(path, index=index, float_format="%.17g")
    logger.info("Wrote %s", path)
    return Path(path)
