"""Label inference on a fixed weight graph and the alternating learners built on it"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from ssdr.model import (
    DataError,
    Dataset,
    HyperParams,
    LabelState,
    NumericalError,
    WeightGraph,
    initial_label_states,
)
from ssdr.weights import apply_node_regularizer, build_weight_graph, neighbor_table, objective

logger = logging.getLogger(__name__)

# Squared Cholesky pivot ratio below which the unlabeled system counts as singular
SINGULAR_RTOL = 1e-14


@dataclass(frozen=True)
class InferenceResult:
    """Per-task outcome of a learner run"""
    soft_f: np.ndarray
    predictions: np.ndarray
    iterations: int
    objective_trace: Tuple[float, ...]


def _embedding_cost(W: np.ndarray) -> np.ndarray:
    A = np.eye(W.shape[0]) - W
    return A.T @ A


def _singular(gram: np.ndarray) -> NumericalError:
    smallest = scipy.linalg.svdvals(gram).min()
    return NumericalError(f"unlabeled system is singular (smallest singular value {smallest:.3e})")


def _cholesky(gram: np.ndarray):
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as e:
        raise _singular(gram) from e
    pivots = np.abs(np.diag(factor[0]))
    if pivots.min() ** 2 <= SINGULAR_RTOL * pivots.max() ** 2:
        raise _singular(gram)
    return factor


def infer_closed_form(graph: WeightGraph, Y, V, labeled_idx, unlabeled_idx) -> np.ndarray:
    """Minimize tr(Fᵀ(I-W)ᵀ(I-W)F) over the unlabeled rows with F_l = V·Y fixed.

    Solves (W_luᵀW_lu + (I_u-W_uu)ᵀ(I_u-W_uu)) F_u = (W_luᵀ(I_l-W_ll) + (I_u-W_uu)ᵀW_ul) V Y,
    with the blocks taken through the index lists.
    """
    Y = np.asarray(Y, dtype=float)
    vy = np.asarray(V, dtype=float)[:, None] * Y
    labeled_idx = np.asarray(labeled_idx, dtype=int)
    unlabeled_idx = np.asarray(unlabeled_idx, dtype=int)
    if unlabeled_idx.size == 0:
        return np.zeros((0, Y.shape[1]))
    A = np.eye(graph.n) - graph.W
    A_u = A[:, unlabeled_idx]
    gram = A_u.T @ A_u
    rhs = -A_u.T @ (A[:, labeled_idx] @ vy)
    F_u = scipy.linalg.cho_solve(_cholesky(gram), rhs)
    if not np.all(np.isfinite(F_u)):
        raise _singular(gram)
    return F_u


def _argmin_unlabeled(gradient: np.ndarray, unlabeled_idx: np.ndarray) -> Tuple[int, int, float]:
    block = gradient[unlabeled_idx]
    pos, j = np.unravel_index(np.argmin(block), block.shape)
    return int(unlabeled_idx[pos]), int(j), float(block[pos, j])


def _constrained_gradient(graph: WeightGraph, vy: np.ndarray, labeled_idx) -> np.ndarray:
    """(I-W)ᵀ(I-W)[V·Y; 0] in original instance order"""
    A = np.eye(graph.n) - graph.W
    return A.T @ (A[:, labeled_idx] @ vy)


def select_most_confident(graph: WeightGraph, V, Y, labeled_idx, unlabeled_idx) -> Tuple[int, int]:
    """(instance, class column) of the most negative unlabeled gradient entry"""
    vy = np.asarray(V, dtype=float)[:, None] * np.asarray(Y, dtype=float)
    gradient = _constrained_gradient(graph, vy, np.asarray(labeled_idx, dtype=int))
    i, j, _ = _argmin_unlabeled(gradient, np.asarray(unlabeled_idx, dtype=int))
    return i, j


def progressive_commit(state: LabelState, i: int, j: int) -> LabelState:
    """Move instance i into the labeled set with class column j.

    The new row enters V with weight 0; the caller recomputes the node regularizer.
    """
    if i not in set(state.unlabeled_idx.tolist()):
        raise DataError(f"instance {i} is already labeled")
    if not 0 <= j < state.n_classes:
        raise DataError(f"class column {j} outside 0..{state.n_classes - 1}")
    one_hot = np.zeros((1, state.n_classes))
    one_hot[0, j] = 1.0
    F = np.array(state.F, copy=True)
    F[i] = 0.0
    return LabelState(
        labeled_idx=np.append(state.labeled_idx, i),
        unlabeled_idx=state.unlabeled_idx[state.unlabeled_idx != i],
        Y=np.vstack([state.Y, one_hot]),
        V=np.append(state.V, 0.0),
        F=F,
    )


def _relaxed_operator(graph: WeightGraph, gamma: float):
    """M and the Cholesky factor of M/γ + I, the operator the selection gradient is built on"""
    M = _embedding_cost(graph.W)
    return M, scipy.linalg.cho_factor(M / gamma + np.eye(graph.n))


def _labeled_rows(y_expanded: np.ndarray, labeled_idx) -> np.ndarray:
    if labeled_idx is None:
        return np.flatnonzero(y_expanded.any(axis=1))
    return np.asarray(labeled_idx, dtype=int)


def relaxed_infer(graph: WeightGraph, y_expanded, v_expanded, gamma: float,
                  labeled_idx: Optional[Sequence[int]] = None) -> np.ndarray:
    """Minimize tr(FᵀMF) + γ‖Λ(F - V·Y)‖² with M = (I-W)ᵀ(I-W), Λ the labeled-row indicator.

    Solves (M/γ + Λ) F = V·Y. Only given rows pay the fitting penalty, so γ → ∞ recovers
    the constrained solution. Labeled rows default to the nonzero rows of ``y_expanded``.
    """
    if not gamma > 0:
        raise DataError(f"gamma must be positive, got {gamma}")
    y_expanded = np.asarray(y_expanded, dtype=float)
    fitted = np.zeros(graph.n)
    fitted[_labeled_rows(y_expanded, labeled_idx)] = 1.0
    target = fitted[:, None] * np.asarray(v_expanded, dtype=float)[:, None] * y_expanded
    system = _embedding_cost(graph.W) / gamma + np.diag(fitted)
    return scipy.linalg.cho_solve(_cholesky(system), target)


def _relaxed_gradient(graph: WeightGraph, target: np.ndarray, gamma: float) -> np.ndarray:
    M, factor = _relaxed_operator(graph, gamma)
    A = scipy.linalg.cho_solve(factor, np.eye(graph.n))
    A = (A + A.T) / 2
    shift = A - np.eye(graph.n)
    B = A @ M @ A + gamma * (shift @ shift)
    return B @ target


def relaxed_select(graph: WeightGraph, v_expanded, y_expanded, gamma: float,
                   unlabeled_idx: Optional[Sequence[int]] = None) -> Tuple[int, int]:
    """Most confident (instance, class column) under the noise-tolerant objective.

    The gradient of ½tr((VY)ᵀB(VY)) with B = AᵀMA + γ(A-I)ᵀ(A-I), A = (M/γ + I)⁻¹,
    is B·VY; its minimum over the unlabeled rows is the pick. Unlabeled rows default to
    the all-zero rows of ``y_expanded``.

    Unlike ``relaxed_infer``, B fits every row: restricted to the given rows, the gradient
    is zero on every unlabeled row. As γ → ∞, B tends to M and the pick matches
    ``select_most_confident``.
    """
    y_expanded = np.asarray(y_expanded, dtype=float)
    target = np.asarray(v_expanded, dtype=float)[:, None] * y_expanded
    if unlabeled_idx is None:
        unlabeled_idx = np.flatnonzero(~y_expanded.any(axis=1))
    i, j, _ = _argmin_unlabeled(_relaxed_gradient(graph, target, gamma),
                                np.asarray(unlabeled_idx, dtype=int))
    return i, j


def harden_labels(row) -> int:
    """Label code (1-based) of the largest entry; ties go to the lowest class"""
    row = np.asarray(row, dtype=float)
    if row.size == 0:
        raise DataError("cannot harden an empty label row")
    return int(np.argmax(row)) + 1


def expanded_labels(state: LabelState) -> Tuple[np.ndarray, np.ndarray]:
    y = np.zeros((state.n, state.n_classes))
    y[state.labeled_idx] = state.Y
    v = np.zeros(state.n)
    v[state.labeled_idx] = state.V
    return y, v


def _infer_task(graph: WeightGraph, state: LabelState, gamma: float) -> LabelState:
    if math.isinf(gamma):
        F = np.array(state.F, copy=True)
        F[state.unlabeled_idx] = infer_closed_form(
            graph, state.Y, state.V, state.labeled_idx, state.unlabeled_idx)
    else:
        y, v = expanded_labels(state)
        F = relaxed_infer(graph, y, v, gamma, state.labeled_idx)
    return state.with_soft_labels(F)


def _predictions(state: LabelState, given: np.ndarray) -> np.ndarray:
    predictions = np.argmax(state.F, axis=1) + 1
    observed = given != 0
    predictions[observed] = given[observed]
    return predictions


def run_batch(dataset: Dataset, params: HyperParams) -> Tuple[WeightGraph, List[InferenceResult]]:
    """Alternate full W rebuilds and closed-form F solves until F stabilizes.

    V is computed once from the first W and then held fixed, so every half-step is an
    exact minimizer of the same objective.
    """
    params.check_against(dataset)
    neighbors = neighbor_table(dataset, params.neighborhood)
    states = initial_label_states(dataset)
    graph = build_weight_graph(dataset, states, params, neighbors)
    states = apply_node_regularizer(graph, states, params)
    trace = [objective(dataset, states, params, graph)]

    iterations = 0
    converged = False
    executor = ThreadPoolExecutor(max_workers=params.workers) if params.workers > 1 else None
    try:
        while iterations < params.max_iters:
            iterations += 1
            if executor is not None:
                updated = list(executor.map(lambda s: _infer_task(graph, s, params.gamma), states))
            else:
                updated = [_infer_task(graph, s, params.gamma) for s in states]
            delta = max(float(np.max(np.abs(new.F - old.F))) for new, old in zip(updated, states))
            states = updated
            trace.append(objective(dataset, states, params, graph))
            graph = build_weight_graph(dataset, states, params, neighbors)
            trace.append(objective(dataset, states, params, graph))
            logger.debug("Batch iteration %d: max |dF| = %.3e, objective = %.6g",
                         iterations, delta, trace[-1])
            if delta < params.tol:
                converged = True
                break
    finally:
        if executor is not None:
            executor.shutdown()

    if not converged:
        logger.warning("Batch inference stopped after %d iterations without reaching tol=%g",
                       iterations, params.tol)
    results = [
        InferenceResult(
            soft_f=np.array(state.F),
            predictions=_predictions(state, given),
            iterations=iterations,
            objective_trace=tuple(trace),
        )
        for state, given in zip(states, dataset.tasks)
    ]
    return graph, results


def _task_pick(graph: WeightGraph, state: LabelState, gamma: float) -> Tuple[int, int, float]:
    if math.isinf(gamma):
        gradient = _constrained_gradient(graph, state.vy, state.labeled_idx)
    else:
        y, v = expanded_labels(state)
        gradient = _relaxed_gradient(graph, v[:, None] * y, gamma)
    return _argmin_unlabeled(gradient, state.unlabeled_idx)


def run_progressive(dataset: Dataset, params: HyperParams) -> Tuple[WeightGraph, List[InferenceResult]]:
    """Commit one most-confident label per iteration, refitting W and V after each.

    Across tasks the single most negative gradient entry wins (lower task index on ties).
    """
    params.check_against(dataset)
    neighbors = neighbor_table(dataset, params.neighborhood)
    states = initial_label_states(dataset)
    trace = []
    commits = 0
    while True:
        graph = build_weight_graph(dataset, states, params, neighbors)
        states = apply_node_regularizer(graph, states, params)
        trace.append(objective(dataset, states, params, graph))
        best = None
        for k, state in enumerate(states):
            if state.n_unlabeled == 0:
                continue
            i, j, value = _task_pick(graph, state, params.gamma)
            if best is None or value < best[3]:
                best = (k, i, j, value)
        if best is None:
            break
        k, i, j, value = best
        states[k] = progressive_commit(states[k], i, j)
        states = apply_node_regularizer(graph, states, params)
        commits += 1
        logger.debug("Commit %d: task %d, instance %d, class %d (gradient %.4g)",
                     commits, k, i, j + 1, value)

    results = [
        InferenceResult(
            soft_f=np.array(state.F),
            predictions=state.label_codes(),
            iterations=commits,
            objective_trace=tuple(trace),
        )
        for state in states
    ]
    return graph, results


def run_learner(dataset: Dataset, params: HyperParams) -> Tuple[WeightGraph, List[InferenceResult]]:
    """Dispatch on ``params.mode``"""
    if params.mode == "progressive":
        return run_progressive(dataset, params)
    return run_batch(dataset, params)
