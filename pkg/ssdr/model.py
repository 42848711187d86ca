"""Shared domain types: datasets, label states, weight graphs, hyperparameters"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

# Label code for an unobserved entry. Observed codes run 1..c.
MISSING = 0


class SsdrError(Exception):
    """Base class for all errors raised by the package"""


class DataError(SsdrError, ValueError):
    """Invalid input data, shapes or invariant violations"""


class NumericalError(SsdrError, ArithmeticError):
    """Singular systems and solver failures"""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """n instances described by q feature views and p (partially observed) label columns"""
    views: Tuple[np.ndarray, ...]
    tasks: Tuple[np.ndarray, ...]
    n_classes: Tuple[int, ...]
    class_names: Optional[Tuple[Tuple[str, ...], ...]] = None

    @property
    def n(self) -> int:
        return self.views[0].shape[0]

    @property
    def p(self) -> int:
        return len(self.tasks)

    @property
    def q(self) -> int:
        return len(self.views)

    @property
    def n_missing(self) -> int:
        """Total number of unobserved labels over all tasks"""
        return int(sum(np.count_nonzero(t == MISSING) for t in self.tasks))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.class_names == other.class_names
            and len(self.views) == len(other.views)
            and len(self.tasks) == len(other.tasks)
            and all(np.array_equal(a, b) for a, b in zip(self.views, other.views))
            and all(np.array_equal(a, b) for a, b in zip(self.tasks, other.tasks))
        )

    def with_views(self, views: Sequence[np.ndarray]) -> 'Dataset':
        """Same labels over a different set of views"""
        return validate_dataset(views, list(self.tasks), self.n_classes, self.class_names)


@dataclass(frozen=True, eq=False)
class LabelState:
    """Per-task label bookkeeping: prior labels Y, node regularizer V and soft labels F.

    ``labeled_idx`` keeps commit order (rows of Y follow it); ``unlabeled_idx`` stays
    ascending. ``V`` holds the diagonal of the node regularizer, aligned with ``labeled_idx``.
    """
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    F: np.ndarray

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def n_classes(self) -> int:
        return self.Y.shape[1]

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_idx)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled_idx)

    @property
    def vy(self) -> np.ndarray:
        """The normalized prior label matrix V·Y (l×c)"""
        return self.V[:, None] * self.Y

    def expanded_target(self) -> np.ndarray:
        """V·Y placed at the labeled rows of an n×c zero matrix"""
        target = np.zeros((self.n, self.n_classes))
        target[self.labeled_idx] = self.vy
        return target

    def label_codes(self) -> np.ndarray:
        """Length-n label column: committed/given codes, MISSING elsewhere"""
        codes = np.full(self.n, MISSING, dtype=int)
        codes[self.labeled_idx] = np.argmax(self.Y, axis=1) + 1
        return codes

    def with_regularizer(self, v: np.ndarray) -> 'LabelState':
        """New state with V replaced and the labeled rows of F reset to V·Y"""
        v = np.asarray(v, dtype=float)
        F = np.array(self.F, copy=True)
        F[self.labeled_idx] = v[:, None] * self.Y
        return LabelState(self.labeled_idx, self.unlabeled_idx, self.Y, _frozen(v), _frozen(F))

    def with_soft_labels(self, F: np.ndarray) -> 'LabelState':
        return LabelState(self.labeled_idx, self.unlabeled_idx, self.Y, self.V, _frozen(F))


@dataclass(frozen=True)
class WeightGraph:
    """Dense row-stochastic reconstruction weights with zero diagonal"""
    W: np.ndarray
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class HyperParams:
    """Learner settings. ``alphas`` weight the views, ``betas`` weight the tasks."""
    alphas: Tuple[float, ...] = (1.0,)
    betas: Tuple[float, ...] = (1.0,)
    lam: float = 0.1
    gamma: float = math.inf
    xi: float = 1e-4
    z: int = 2
    neighborhood: Union[str, int] = "full"
    mode: str = "batch"
    max_iters: int = 20
    tol: float = 1e-6
    regularize: bool = True
    degree_scope: str = "labeled"
    solver: str = "auto"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'alphas', tuple(float(a) for a in self.alphas))
        object.__setattr__(self, 'betas', tuple(float(b) for b in self.betas))
        for name, weights in (('alpha', self.alphas), ('beta', self.betas)):
            if not weights:
                raise DataError(f"at least one {name} weight is required")
            if any(not 0.0 <= w <= 1.0 for w in weights):
                raise DataError(f"{name} weights must lie in [0, 1], got {list(weights)}")
        if not self.lam > 0:
            raise DataError(f"lambda must be positive, got {self.lam}")
        if not self.gamma > 0:
            raise DataError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.xi < 0.1:
            raise DataError(f"xi must be a small nonnegative value (< 0.1), got {self.xi}")
        if int(self.z) != self.z or self.z < 1:
            raise DataError(f"z must be a positive integer, got {self.z}")
        if self.neighborhood != "full":
            if isinstance(self.neighborhood, bool) or not isinstance(self.neighborhood, (int, np.integer)):
                raise DataError(f"neighborhood must be 'full' or an integer, got {self.neighborhood!r}")
            if self.neighborhood < 1:
                raise DataError(f"neighborhood size must be at least 1, got {self.neighborhood}")
        if self.mode not in ("batch", "progressive"):
            raise DataError(f"unknown inference mode: {self.mode}")
        if self.max_iters < 1:
            raise DataError("max_iters must be at least 1")
        if not self.tol >= 0:
            raise DataError("tol must be nonnegative")
        if self.degree_scope not in ("labeled", "all"):
            raise DataError(f"unknown degree scope: {self.degree_scope}")
        if self.solver not in ("auto", "lowrank", "dense"):
            raise DataError(f"unknown solver: {self.solver}")
        if self.workers < 1:
            raise DataError("workers must be at least 1")

    def check_against(self, dataset: Dataset) -> None:
        """Raise if the weight vectors do not match the dataset's views and tasks"""
        if len(self.alphas) != dataset.q:
            raise DataError(f"{len(self.alphas)} alpha weights given for {dataset.q} views")
        if len(self.betas) != dataset.p:
            raise DataError(f"{len(self.betas)} beta weights given for {dataset.p} tasks")
        if self.neighborhood != "full" and self.neighborhood >= dataset.n:
            raise DataError(f"neighborhood size {self.neighborhood} must be below n={dataset.n}")


@dataclass(frozen=True)
class Embedding:
    """Low-dimensional coordinates and the embedding cost they reach"""
    coords: np.ndarray
    cost: float
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class SignedLabels:
    """±1/0 label matrix for the cross-propagation score.

    ``column_task[c]`` names the task each column was expanded from.
    """
    matrix: np.ndarray
    column_task: Tuple[int, ...]

    @property
    def p(self) -> int:
        return max(self.column_task) + 1 if self.column_task else 0


@dataclass(frozen=True)
class CpReport:
    """Cross-propagation matrix aggregated per task pair"""
    matrix: np.ndarray
    off_diagonal_sum: float
    diagonal_sum: float
    expanded: Optional[np.ndarray] = None


def _as_view(raw, k: int) -> np.ndarray:
    try:
        view = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as e:
        raise DataError(f"view {k} is not a rectangular numeric array: {e}") from e
    if view.ndim == 1:
        view = view.reshape(-1, 1)
    if view.ndim != 2:
        raise DataError(f"view {k} must be two-dimensional, got shape {view.shape}")
    if not np.all(np.isfinite(view)):
        raise DataError(f"view {k} contains non-finite values")
    return view


def _label_code(value) -> int:
    if value is None:
        return MISSING
    if isinstance(value, float) and math.isnan(value):
        return MISSING
    if int(value) != value:
        raise DataError(f"label {value!r} is not an integer class code")
    return int(value)


def _label_columns(labels) -> List[np.ndarray]:
    if isinstance(labels, np.ndarray) and labels.dtype != object:
        if labels.ndim == 1:
            labels = [labels]
        elif labels.ndim == 2:
            labels = list(labels.T)
        else:
            raise DataError(f"labels must be one- or two-dimensional, got shape {labels.shape}")
    else:
        labels = list(labels)
        if labels and not all(isinstance(c, (Sequence, np.ndarray)) for c in labels):
            # a single flat column
            labels = [labels]
    return [np.array([_label_code(v) for v in column], dtype=int) for column in labels]


def validate_dataset(views, labels, n_classes: Optional[Sequence[int]] = None,
                     class_names: Optional[Sequence[Sequence[str]]] = None) -> Dataset:
    """Build a Dataset from raw arrays, checking every invariant.

    ``labels`` is a list of task columns (or an n×p array); entries are class codes
    1..c with ``None``/NaN/0 marking a missing label. Instances are never reordered.
    """
    views = [_as_view(v, k) for k, v in enumerate(views)]
    if not views:
        raise DataError("at least one view is required")
    n = views[0].shape[0]
    if any(v.shape[0] != n for v in views):
        raise DataError(f"view row mismatch: {[v.shape[0] for v in views]}")
    if n < 2:
        raise DataError(f"at least two instances are required, got {n}")

    tasks = _label_columns(labels)
    if not tasks:
        raise DataError("at least one task is required")
    if n_classes is not None and len(n_classes) != len(tasks):
        raise DataError(f"{len(n_classes)} class counts given for {len(tasks)} tasks")

    counts = []
    for k, column in enumerate(tasks):
        if len(column) != n:
            raise DataError(f"task {k} has {len(column)} labels for {n} instances")
        observed = column[column != MISSING]
        if observed.size == 0:
            raise DataError(f"task {k} has no labels")
        if np.any(observed < 1):
            raise DataError(f"task {k} has a label below 1")
        c = int(n_classes[k]) if n_classes is not None else int(observed.max())
        if np.any(observed > c):
            raise DataError(f"task {k} has a label outside 1..{c}")
        empty = sorted(set(range(1, c + 1)) - set(observed.tolist()))
        if empty:
            raise DataError(f"task {k} has no labels for class(es) {empty}")
        counts.append(c)

    if class_names is not None:
        class_names = tuple(tuple(str(s) for s in names) for names in class_names)

    return Dataset(
        views=tuple(_frozen(v) for v in views),
        tasks=tuple(_frozen(t) for t in tasks),
        n_classes=tuple(counts),
        class_names=class_names,
    )


def binarize_labels(column, n_classes: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-hot prior matrix Y for the observed entries of a label column.

    Returns ``(Y, labeled_idx, unlabeled_idx)``; rows of Y follow ``labeled_idx``.
    """
    column = np.array([_label_code(v) for v in column], dtype=int)
    observed = column != MISSING
    codes = column[observed]
    if np.any((codes < 1) | (codes > n_classes)):
        bad = codes[(codes < 1) | (codes > n_classes)][0]
        raise DataError(f"label {bad} outside class range 1..{n_classes}")
    labeled_idx = np.flatnonzero(observed)
    unlabeled_idx = np.flatnonzero(~observed)
    Y = np.eye(n_classes)[codes - 1]
    return Y, labeled_idx, unlabeled_idx


def label_states(tasks: Sequence, n_classes: Optional[Sequence[int]] = None) -> List[LabelState]:
    """Label states for raw task columns: V = 1, F_l = Y, F_u = 0.

    Class counts default to the largest observed code per task.
    """
    columns = _label_columns(tasks)
    if n_classes is None:
        n_classes = [int(column.max()) if column.size else 0 for column in columns]
    states = []
    for column, c in zip(columns, n_classes):
        Y, labeled_idx, unlabeled_idx = binarize_labels(column, c)
        F = np.zeros((len(column), c))
        F[labeled_idx] = Y
        states.append(LabelState(
            labeled_idx=_frozen(labeled_idx),
            unlabeled_idx=_frozen(unlabeled_idx),
            Y=_frozen(Y),
            V=_frozen(np.ones(len(labeled_idx))),
            F=_frozen(F),
        ))
    return states


def initial_label_states(dataset: Dataset) -> List[LabelState]:
    """Label states before any weights exist"""
    return label_states(dataset.tasks, dataset.n_classes)


def signed_label_matrix(states: Sequence[LabelState]) -> SignedLabels:
    """±1 label matrix over the labeled rows of each task, 0 elsewhere.

    Tasks with two classes give one column (class 1 positive). Tasks with more
    classes are expanded one-vs-rest into one column per class.
    """
    columns = []
    column_task = []
    for k, state in enumerate(states):
        n = state.n
        c = state.n_classes
        positives = [0] if c <= 2 else list(range(c))
        for j in positives:
            col = np.zeros(n)
            col[state.labeled_idx] = np.where(state.Y[:, j] > 0, 1.0, -1.0)
            columns.append(col)
            column_task.append(k)
    matrix = np.column_stack(columns) if columns else np.zeros((0, 0))
    return SignedLabels(matrix=matrix, column_task=tuple(column_task))
