"""Cross-propagation success measure, CP-guided parameter selection and metrics"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import multilabel_confusion_matrix, zero_one_loss

from ssdr.inference import InferenceResult, run_learner
from ssdr.model import (
    CpReport,
    DataError,
    Dataset,
    HyperParams,
    SignedLabels,
    WeightGraph,
    initial_label_states,
    signed_label_matrix,
)

logger = logging.getLogger(__name__)


def cross_propagation(graph: Union[WeightGraph, np.ndarray], signed: Union[SignedLabels, np.ndarray],
                      z: int = 2) -> CpReport:
    """CP(W) = Fᵀ Wᶻ F, aggregated over the columns each task expanded into.

    Wᶻ is applied as z successive products with F; it is never formed.
    """
    if int(z) != z or z < 1:
        raise DataError(f"z must be a positive integer, got {z}")
    W = graph.W if isinstance(graph, WeightGraph) else np.asarray(graph, dtype=float)
    if isinstance(signed, SignedLabels):
        F = np.asarray(signed.matrix, dtype=float)
        column_task = np.asarray(signed.column_task, dtype=int)
    else:
        F = np.asarray(signed, dtype=float)
        if F.ndim == 1:
            F = F.reshape(-1, 1)
        column_task = np.arange(F.shape[1])
    propagated = F
    for _ in range(int(z)):
        propagated = W @ propagated
    expanded = F.T @ propagated
    p = int(column_task.max()) + 1 if column_task.size else 0
    matrix = np.zeros((p, p))
    np.add.at(matrix, (column_task[:, None], column_task[None, :]), expanded)
    diagonal = float(np.trace(matrix))
    return CpReport(
        matrix=matrix,
        off_diagonal_sum=float(matrix.sum() - diagonal),
        diagonal_sum=diagonal,
        expanded=expanded,
    )


def cp_score(report: CpReport) -> float:
    """Off-diagonal mass for several tasks; the single CP value for one task"""
    if report.matrix.shape[0] > 1:
        return report.off_diagonal_sum
    return report.diagonal_sum


def given_label_cp(dataset: Dataset, graph: WeightGraph, z: int) -> CpReport:
    """CP over the given labels only, so predicted labels never score themselves"""
    return cross_propagation(graph, signed_label_matrix(initial_label_states(dataset)), z)


@dataclass(frozen=True)
class CpSelection:
    """Winner of a CP grid search, with every grid point's score in grid order"""
    best: HyperParams
    best_index: int
    scores: Tuple[float, ...]
    runs: Tuple[Tuple[WeightGraph, List[InferenceResult]], ...] = field(repr=False, default=())


def _grid_point(template: HyperParams, point: Union[HyperParams, Mapping[str, Any]]) -> HyperParams:
    if isinstance(point, HyperParams):
        return point
    overrides = dict(point)
    if 'alpha' in overrides:
        overrides['alphas'] = tuple(np.atleast_1d(overrides.pop('alpha')).tolist())
    if 'beta' in overrides:
        overrides['betas'] = tuple(np.atleast_1d(overrides.pop('beta')).tolist())
    if 'lambda' in overrides:
        overrides['lam'] = float(overrides.pop('lambda'))
    return replace(template, **overrides)


def select_params_by_cp(dataset: Dataset, grid: Sequence[Union[HyperParams, Mapping[str, Any]]],
                        template: HyperParams) -> CpSelection:
    """Run the learner at every grid point and keep the one with the largest CP score.

    Grid points are HyperParams or override mappings (``alpha``/``beta`` lists or any
    HyperParams field). Ties go to the earliest grid point.
    """
    if not grid:
        raise DataError("CP grid is empty")
    candidates = [_grid_point(template, point) for point in grid]

    def evaluate(params: HyperParams):
        graph, results = run_learner(dataset, params)
        return graph, results, cp_score(given_label_cp(dataset, graph, params.z))

    if template.workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=min(template.workers, len(candidates))) as executor:
            outcomes = list(executor.map(evaluate, candidates))
    else:
        outcomes = [evaluate(params) for params in candidates]

    scores = tuple(score for _, _, score in outcomes)
    best_index = int(np.argmax(scores))
    logger.info("CP grid: best point %d of %d (score %.6g)", best_index, len(scores), scores[best_index])
    return CpSelection(
        best=candidates[best_index],
        best_index=best_index,
        scores=scores,
        runs=tuple((graph, results) for graph, results, _ in outcomes),
    )


def _task_columns(values) -> List[np.ndarray]:
    if isinstance(values, np.ndarray) and values.ndim == 1:
        return [values]
    if isinstance(values, np.ndarray) and values.ndim == 2:
        return list(values.T)
    values = list(values)
    if values and np.ndim(values[0]) == 0:
        return [np.asarray(values)]
    return [np.asarray(v) for v in values]


def f1_micro(predictions, truth, positive_labels: Optional[Sequence] = None) -> float:
    """2·TP / (2·TP + FP + FN) pooled over every task and positive class; 0 when empty.

    ``positive_labels`` lists, per task, the label codes counted as positives
    (default: every class present in the task's truth or predictions).
    """
    predicted = _task_columns(predictions)
    actual = _task_columns(truth)
    if len(predicted) != len(actual):
        raise DataError(f"{len(predicted)} prediction columns for {len(actual)} truth columns")
    if positive_labels is not None and np.ndim(positive_labels[0]) == 0:
        positive_labels = [positive_labels]
    tp = fp = fn = 0
    for k, (pred, true) in enumerate(zip(predicted, actual)):
        if len(pred) != len(true):
            raise DataError(f"task {k}: {len(pred)} predictions for {len(true)} labels")
        if len(true) == 0:
            continue
        labels = (np.union1d(pred, true) if positive_labels is None
                  else np.asarray(positive_labels[k]))
        if labels.size == 0:
            continue
        confusion = multilabel_confusion_matrix(true, pred, labels=labels)
        tp += int(confusion[:, 1, 1].sum())
        fp += int(confusion[:, 0, 1].sum())
        fn += int(confusion[:, 1, 0].sum())
    denominator = 2 * tp + fp + fn
    return 2 * tp / denominator if denominator else 0.0


def error_rate(predictions, truth) -> float:
    """Fraction of instances whose predicted label differs from the truth"""
    pred = np.ravel(np.asarray(predictions))
    true = np.ravel(np.asarray(truth))
    if pred.shape != true.shape:
        raise DataError(f"{pred.size} predictions for {true.size} labels")
    if pred.size == 0:
        return 0.0
    return float(zero_one_loss(true, pred))


def normalize_for_plot(values: Sequence[float]) -> List[float]:
    """Min-max scale a series to [0, 1] (all zeros when constant)"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return []
    span = values.max() - values.min()
    if span == 0:
        return [0.0] * values.size
    return ((values - values.min()) / span).tolist()


@dataclass(frozen=True)
class TrialMetrics:
    seed: int
    error_rate: float
    f1_micro: float
    cp_off_diagonal_sum: float


@dataclass
class MetricReport:
    """Per-trial metrics with their mean and standard deviation"""
    per_trial: List[TrialMetrics] = field(default_factory=list)

    def _values(self, name: str) -> np.ndarray:
        return np.array([getattr(t, name) for t in self.per_trial], dtype=float)

    def mean(self, name: str) -> float:
        values = self._values(name)
        return float(values.mean()) if values.size else float('nan')

    def std(self, name: str) -> float:
        values = self._values(name)
        return float(values.std()) if values.size else float('nan')

    @property
    def error_rate(self) -> float:
        return self.mean('error_rate')

    @property
    def f1_micro(self) -> float:
        return self.mean('f1_micro')

    def summary(self) -> Dict[str, Any]:
        names = ('error_rate', 'f1_micro', 'cp_off_diagonal_sum')
        return {
            'trials': len(self.per_trial),
            'mean': {name: self.mean(name) for name in names},
            'std': {name: self.std(name) for name in names},
        }
