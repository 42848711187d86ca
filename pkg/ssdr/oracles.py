"""Brute-force reference solvers.

Each routine recomputes a quantity the library produces, through a slower and
independent path: explicit loops, generic dense solves, materialized powers or
finite differences. The test suite and the ``oracle`` CLI command compare against them.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from ssdr.model import Dataset, HyperParams, LabelState
from ssdr.weights import condition_system, local_covariance, neighbor_set

logger = logging.getLogger(__name__)


def kkt_weight_row(dataset: Dataset, states: Sequence[LabelState], params: HyperParams, i: int,
                   neighbors: Optional[np.ndarray] = None) -> np.ndarray:
    """min wᵀLw s.t. wᵀ1 = 1 through the (m+1)×(m+1) KKT system, L assembled term by term"""
    if neighbors is None:
        neighbors = neighbor_set(dataset, i, params.neighborhood)
    neighbors = np.asarray(neighbors)
    m = len(neighbors)
    L = params.lam * np.eye(m)
    for alpha, view in zip(params.alphas, dataset.views):
        L += alpha * local_covariance(view[i], view[neighbors]).matrix
    for beta, state in zip(params.betas, states):
        L += beta * local_covariance(state.F[i], state.F[neighbors]).matrix
    L = condition_system(L, params.xi, m)

    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = 2 * L
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    solution = np.linalg.solve(kkt, rhs)
    row = np.zeros(dataset.n)
    row[neighbors] = solution[:m]
    return row


def dense_stationarity_solve(W, Y, V, labeled_idx, unlabeled_idx) -> np.ndarray:
    """F_u from the full n×n system: (I-W)ᵀ(I-W)F = 0 on unlabeled rows, F = V·Y on labeled rows"""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    A = np.eye(n) - W
    M = A.T @ A
    system = M.copy()
    rhs = np.zeros((n, np.asarray(Y).shape[1]))
    for pos, i in enumerate(labeled_idx):
        system[i] = 0.0
        system[i, i] = 1.0
        rhs[i] = V[pos] * np.asarray(Y)[pos]
    F = np.linalg.solve(system, rhs)
    return F[np.asarray(unlabeled_idx, dtype=int)]


def stationarity_residual(W, F_u, Y, V, labeled_idx, unlabeled_idx) -> float:
    """Max-norm of the unlabeled rows of (I-W)ᵀ(I-W)F with F_l = V·Y"""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    F = np.zeros((n, np.asarray(Y).shape[1]))
    F[np.asarray(labeled_idx, dtype=int)] = np.asarray(V)[:, None] * np.asarray(Y)
    F[np.asarray(unlabeled_idx, dtype=int)] = F_u
    A = np.eye(n) - W
    return float(np.max(np.abs((A.T @ (A @ F))[np.asarray(unlabeled_idx, dtype=int)]), initial=0.0))


def relaxed_residual(W, F, y_expanded, v_expanded, gamma: float,
                     labeled_idx: Optional[Sequence[int]] = None) -> float:
    """Max-norm gradient of tr(Fᵀ(I-W)ᵀ(I-W)F) + γ Σ_{i labeled} ‖f_i - v_i y_i‖² at F"""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    A = np.eye(n) - W
    y_expanded = np.asarray(y_expanded, dtype=float)
    if labeled_idx is None:
        labeled_idx = np.flatnonzero(y_expanded.any(axis=1))
    fitted = np.zeros((n, 1))
    fitted[np.asarray(labeled_idx, dtype=int)] = 1.0
    target = np.asarray(v_expanded)[:, None] * y_expanded
    gradient = 2 * A.T @ (A @ F) + 2 * gamma * fitted * (F - target)
    return float(np.max(np.abs(gradient)))


def explicit_power_cp(W, F, z: int) -> np.ndarray:
    """Fᵀ Wᶻ F with Wᶻ materialized"""
    F = np.asarray(F, dtype=float)
    return F.T @ np.linalg.matrix_power(np.asarray(W, dtype=float), z) @ F


def exhaustive_selection(W, V, Y, labeled_idx, unlabeled_idx) -> Tuple[int, int]:
    """Scan every (unlabeled instance, class) gradient entry; the first strict minimum wins"""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    A = np.eye(n) - W
    M = A.T @ A
    vy = np.asarray(V)[:, None] * np.asarray(Y)
    best, best_value = None, np.inf
    for i in sorted(int(u) for u in unlabeled_idx):
        for j in range(vy.shape[1]):
            value = sum(M[i, l] * vy[pos, j] for pos, l in enumerate(labeled_idx))
            if value < best_value:
                best, best_value = (i, j), value
    return best


def _relaxed_cost(M: np.ndarray, gamma: float, target: np.ndarray) -> float:
    """½ min_F [tr(FᵀMF) + γ‖F - T‖²], evaluated at the minimizer"""
    F = np.linalg.solve(M / gamma + np.eye(M.shape[0]), target)
    return 0.5 * float(np.sum(F * (M @ F)) + gamma * np.sum((F - target) ** 2))


def relaxed_selection_oracle(W, v_expanded, y_expanded, gamma: float,
                             unlabeled_idx: Optional[Sequence[int]] = None,
                             step: float = 1e-4) -> Tuple[int, int]:
    """Central finite differences of the reduced relaxed cost with respect to V·Y"""
    W = np.asarray(W, dtype=float)
    A = np.eye(W.shape[0]) - W
    M = A.T @ A
    y_expanded = np.asarray(y_expanded, dtype=float)
    target = np.asarray(v_expanded, dtype=float)[:, None] * y_expanded
    if unlabeled_idx is None:
        unlabeled_idx = np.flatnonzero(~y_expanded.any(axis=1))
    best, best_value = None, np.inf
    for i in sorted(int(u) for u in unlabeled_idx):
        for j in range(target.shape[1]):
            bump = np.zeros_like(target)
            bump[i, j] = step
            value = (_relaxed_cost(M, gamma, target + bump) - _relaxed_cost(M, gamma, target - bump)) / (2 * step)
            if value < best_value:
                best, best_value = (i, j), value
    return best


def earlier_framework_reference(X, labels, k: int, lam: float, xi: float = 0.0) -> np.ndarray:
    """Single view, single task: features-only neighborhood weights, then F_l = Y propagation.

    Returns the n×c soft label matrix. Neighbors are the k nearest under per-feature
    standardized Euclidean distance with ties to the lower index.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = X.shape[0]
    std = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)
    W = np.zeros((n, n))
    for i in range(n):
        distances = np.sqrt(((Z - Z[i]) ** 2).sum(axis=1))
        distances[i] = np.inf
        order = sorted(range(n), key=lambda j: (distances[j], j))[:k]
        nbrs = np.array(sorted(order))
        diff = X[i] - X[nbrs]
        C = diff @ diff.T + lam * np.eye(k)
        C = condition_system(C, xi, k)
        w = np.linalg.solve(C, np.ones(k))
        W[i, nbrs] = w / w.sum()

    c = int(labels.max())
    labeled = np.flatnonzero(labels > 0)
    unlabeled = np.flatnonzero(labels == 0)
    Y = np.eye(c)[labels[labeled] - 1]
    A = np.eye(n) - W
    F = np.zeros((n, c))
    F[labeled] = Y
    F[unlabeled] = np.linalg.lstsq(A[:, unlabeled], -A[:, labeled] @ Y, rcond=None)[0]
    return F
