"""Delimited-text ingestion, view splitting, label masking and matrix persistence"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.preprocessing import StandardScaler, normalize

from ssdr.model import MISSING, DataError, Dataset, validate_dataset

logger = logging.getLogger(__name__)

MISSING_TOKEN = "?"
MAX_MASK_ATTEMPTS = 100


@dataclass(frozen=True)
class Table:
    """Numeric feature matrix plus coded label columns read from one file"""
    features: np.ndarray
    labels: np.ndarray
    class_names: Tuple[Tuple[str, ...], ...]

    def to_dataset(self, views: Optional[Sequence[np.ndarray]] = None) -> Dataset:
        n_classes = [len(names) for names in self.class_names]
        return validate_dataset(views if views is not None else [self.features],
                                self.labels, n_classes, self.class_names)


def _read_rows(path: Path, delimiter: Optional[str]) -> List[List[str]]:
    with open(path, newline='') as f:
        if delimiter is None:
            rows = [line.split() for line in f]
        else:
            rows = [[cell.strip() for cell in row] for row in csv.reader(f, delimiter=delimiter)]
    return [row for row in rows if row and any(cell for cell in row)]


def _code_labels(tokens: Sequence[Sequence[str]]) -> Tuple[np.ndarray, Tuple[Tuple[str, ...], ...]]:
    columns = []
    names = []
    for column in zip(*tokens):
        observed = sorted({t for t in column if t != MISSING_TOKEN}, key=_natural_key)
        code = {token: c + 1 for c, token in enumerate(observed)}
        columns.append([MISSING if t == MISSING_TOKEN else code[t] for t in column])
        names.append(tuple(observed))
    return np.array(columns, dtype=int).T, tuple(names)


def _natural_key(token: str):
    try:
        return (0, float(token), token)
    except ValueError:
        return (1, 0.0, token)


def load_table(path: Union[str, Path], delimiter: Optional[str] = ",",
               label_columns: Sequence[int] = (-1,)) -> Table:
    """Read a delimited file of feature columns and label columns.

    Label tokens are mapped to codes 1..c in sorted order; "?" marks a missing label.
    ``delimiter=None`` splits on whitespace.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    rows = _read_rows(path, delimiter)
    if not rows:
        raise DataError(f"{path} is empty")
    width = len(rows[0])
    for line, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DataError(f"{path}: ragged row at line {line} ({len(row)} fields, expected {width})")
    label_pos = sorted({c % width for c in label_columns})
    feature_pos = [c for c in range(width) if c not in label_pos]
    if not feature_pos:
        raise DataError(f"{path}: no feature columns left after removing labels")

    features = np.empty((len(rows), len(feature_pos)))
    for line, row in enumerate(rows, start=1):
        for out, c in enumerate(feature_pos):
            try:
                features[line - 1, out] = float(row[c])
            except ValueError as e:
                raise DataError(f"{path}: non-numeric feature {row[c]!r} at line {line}, column {c + 1}") from e
    labels, names = _code_labels([[row[c] for c in label_pos] for row in rows])
    logger.info("Loaded %s: %d instances, %d features, %d label column(s)",
                path, features.shape[0], features.shape[1], labels.shape[1])
    return Table(features=features, labels=labels, class_names=names)


def load_labels(path: Union[str, Path], delimiter: Optional[str] = ",") -> np.ndarray:
    """Integer label codes (one column per task, "?" → 0) from a delimited file"""
    rows = _read_rows(Path(path), delimiter)
    try:
        return np.array([[MISSING if cell == MISSING_TOKEN else int(float(cell)) for cell in row]
                         for row in rows], dtype=int)
    except ValueError as e:
        raise DataError(f"{path}: label file must hold integer codes or '?': {e}") from e


def _parse_range(spec, d: int) -> Tuple[int, int]:
    if isinstance(spec, str):
        try:
            start, end = (int(part) for part in spec.split('-'))
        except ValueError as e:
            raise DataError(f"view range {spec!r} is not of the form 'a-b'") from e
    else:
        start, end = spec
    if not 1 <= start <= end <= d:
        raise DataError(f"view range {start}-{end} outside columns 1..{d}")
    return start, end


def split_views(matrix, spec: Union[str, Sequence] = "halves") -> List[np.ndarray]:
    """Split feature columns into views.

    "halves" gives columns 1..⌈d/2⌉ and the rest; "joined" keeps one view; otherwise
    ``spec`` lists 1-based inclusive ranges ("a-b" or (a, b)) that must cover every
    column exactly once.
    """
    matrix = np.asarray(matrix, dtype=float)
    d = matrix.shape[1]
    if spec == "joined":
        return [matrix]
    if spec == "halves":
        if d < 2:
            raise DataError("cannot split fewer than two columns into halves")
        cut = math.ceil(d / 2)
        return [matrix[:, :cut], matrix[:, cut:]]
    ranges = [_parse_range(item, d) for item in spec]
    covered = np.zeros(d, dtype=int)
    for start, end in ranges:
        covered[start - 1:end] += 1
    if np.any(covered > 1):
        raise DataError(f"view ranges overlap at column {int(np.argmax(covered > 1)) + 1}")
    if np.any(covered == 0):
        raise DataError(f"view ranges leave column {int(np.argmax(covered == 0)) + 1} uncovered")
    return [matrix[:, start - 1:end] for start, end in ranges]


def mask_labels(labels, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Hide labels, keeping max(⌈fraction·n⌉, c) per task with at least one per class.

    Returns ``(masked, hidden)``: masked codes (0 where hidden) and a boolean mask of the
    hidden entries. The truth is left untouched for scoring.
    """
    if not 0 < fraction < 1:
        raise DataError(f"label fraction must lie in (0, 1), got {fraction}")
    labels = np.asarray(labels, dtype=int)
    if labels.ndim == 1:
        labels = labels.reshape(-1, 1)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    masked = np.zeros_like(labels)
    for k in range(labels.shape[1]):
        column = labels[:, k]
        candidates = np.flatnonzero(column != MISSING)
        classes = np.unique(column[candidates])
        target = max(math.ceil(fraction * n), classes.size)
        if target > candidates.size:
            raise DataError(f"task {k}: cannot label {target} of {candidates.size} known instances")
        chosen = None
        for _ in range(MAX_MASK_ATTEMPTS):
            # one per class first, the rest uniformly
            floor = np.array([rng.choice(candidates[column[candidates] == c]) for c in classes])
            rest = np.setdiff1d(candidates, floor)
            extra = rng.choice(rest, size=target - floor.size, replace=False)
            chosen = np.union1d(floor, extra)
            if np.array_equal(np.unique(column[chosen]), classes):
                break
        else:
            raise DataError(f"task {k}: could not keep a label for every class")
        masked[chosen, k] = column[chosen]
    return masked, (masked == MISSING) & (labels != MISSING)


def normalize_rows(matrix) -> np.ndarray:
    """Scale every nonzero row to unit Euclidean length"""
    return normalize(np.asarray(matrix, dtype=float), norm='l2')


def standardize_columns(matrix) -> np.ndarray:
    """Zero-mean, unit-variance columns"""
    return StandardScaler().fit_transform(np.asarray(matrix, dtype=float))


def save_matrix(path: Union[str, Path], matrix, delimiter: str = ",") -> None:
    """Write a matrix as delimited decimal text with 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(np.asarray(matrix, dtype=float)), fmt="%.17g", delimiter=delimiter)


def load_matrix(path: Union[str, Path], delimiter: str = ",") -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"matrix file not found: {path}")
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=delimiter, dtype=float))
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
