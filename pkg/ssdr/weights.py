"""Reconstruction weights: local covariances, conditioning and the constrained row solve.

Every row of W solves

    min_w  wᵀ L_i w   s.t.  wᵀ1 = 1,   L_i = Σ α_k C^{x_i^k} + Σ β_k C^{f_i^k} + λI

over the neighbors of instance i. ``L_i = μI + BBᵀ`` where B stacks the scaled feature
and label difference rows, so the solve goes through the Woodbury identity whenever the
stacked rank is below the neighbor count.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.preprocessing import StandardScaler

from ssdr.model import (
    DataError,
    Dataset,
    HyperParams,
    LabelState,
    NumericalError,
    WeightGraph,
)

logger = logging.getLogger(__name__)

# Added to the diagonal when a local system has zero trace (all neighbors coincide).
EPS_ABS = 1e-8
ROW_SUM_TOL = 1e-8
MASS_TOL = 1e-12
# Upper bound on the elements of one stacked difference block.
BLOCK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class LocalCovariance:
    """Gram matrix of the differences between one instance and its neighbors"""
    matrix: np.ndarray
    center: int = -1
    source: str = ""


@dataclass(frozen=True)
class MixedLocalSystem:
    """Conditioned weighted sum of local covariances plus λI for one row"""
    L: np.ndarray
    neighbor_idx: np.ndarray


def standardized_features(dataset: Dataset) -> np.ndarray:
    """Concatenation of the views after per-feature standardization"""
    return np.hstack([StandardScaler().fit_transform(view) for view in dataset.views])


def neighbor_set(dataset: Dataset, i: int, neighborhood: Union[str, int] = "full",
                 features: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices instance ``i`` may reconstruct from, never including ``i``.

    "full" gives every other instance; an integer k gives the k nearest by Euclidean
    distance over the standardized views, ties going to the lower index.
    """
    n = dataset.n
    if not 0 <= i < n:
        raise DataError(f"instance index {i} outside 0..{n - 1}")
    if neighborhood == "full":
        return np.delete(np.arange(n), i)
    k = int(neighborhood)
    if k >= n:
        raise DataError(f"neighborhood size {k} must be below n={n}")
    if features is None:
        features = standardized_features(dataset)
    distances = cdist(features[i:i + 1], features)[0]
    distances[i] = np.inf
    return np.sort(np.argsort(distances, kind="stable")[:k])


def neighbor_table(dataset: Dataset, neighborhood: Union[str, int] = "full") -> Optional[np.ndarray]:
    """n×k table of neighbor_set rows for k-mode; None for the full neighborhood"""
    if neighborhood == "full":
        return None
    features = standardized_features(dataset)
    return np.vstack([neighbor_set(dataset, i, neighborhood, features) for i in range(dataset.n)])


def local_covariance(center, neighbors, center_index: int = -1, source: str = "") -> LocalCovariance:
    """C = (1x_i - X'_i)(1x_i - X'_i)ᵀ for a center row and its neighbor rows"""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    neighbors = np.asarray(neighbors, dtype=float)
    if neighbors.ndim == 1:
        neighbors = neighbors.reshape(-1, center.size)
    if neighbors.shape[0] == 0:
        raise DataError("local covariance needs at least one neighbor")
    diff = center[None, :] - neighbors
    return LocalCovariance(matrix=diff @ diff.T, center=center_index, source=source)


def _conditioning_shift(trace, xi: float, m: int):
    trace = np.asarray(trace, dtype=float)
    return np.where(trace > 0, xi * trace / m, EPS_ABS)


def condition_system(L, xi: float, m: Optional[int] = None) -> np.ndarray:
    """L + (ξ·tr(L)/m)·I, or L + ε·I when the trace vanishes"""
    L = np.asarray(L, dtype=float)
    m = L.shape[0] if m is None else m
    shift = float(_conditioning_shift(np.trace(L), xi, m))
    if np.trace(L) <= 0:
        logger.warning("Zero-trace local system, adding conditioning floor %g", EPS_ABS)
    return L + shift * np.eye(L.shape[0])


def _sources(dataset: Dataset, states: Sequence[LabelState],
             params: HyperParams) -> List[Tuple[float, np.ndarray]]:
    """(sqrt weight, matrix) pairs for every view and task with a nonzero weight"""
    sources = [(np.sqrt(a), view) for a, view in zip(params.alphas, dataset.views) if a > 0]
    sources += [(np.sqrt(b), state.F) for b, state in zip(params.betas, states) if b > 0]
    return sources


def _difference_blocks(sources, rows: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Stacked scaled differences, shape (len(rows), m, r)"""
    blocks = [scale * (matrix[rows][:, None, :] - matrix[neighbors]) for scale, matrix in sources]
    if not blocks:
        return np.zeros(neighbors.shape + (0,))
    return np.concatenate(blocks, axis=2)


def mixed_local_system(dataset: Dataset, states: Sequence[LabelState], params: HyperParams,
                       i: int, neighbors: Optional[np.ndarray] = None) -> MixedLocalSystem:
    """Dense conditioned L_i for one row"""
    if neighbors is None:
        neighbors = neighbor_set(dataset, i, params.neighborhood)
    B = _difference_blocks(_sources(dataset, states, params), np.array([i]), neighbors[None, :])[0]
    m = len(neighbors)
    L = B @ B.T + params.lam * np.eye(m)
    return MixedLocalSystem(L=condition_system(L, params.xi, m), neighbor_idx=neighbors)


def _solve_block(B: np.ndarray, lam: float, xi: float, solver: str) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized solutions of L w = 1 for a stack of systems L = λI + BBᵀ (conditioned)"""
    R, m, r = B.shape
    trace = lam * m + np.einsum('imr,imr->i', B, B)
    mu = lam + _conditioning_shift(trace, xi, m)
    ones = np.ones((R, m))
    use_lowrank = solver == "lowrank" or (solver == "auto" and r < m)
    if r == 0:
        u = ones / mu[:, None]
    elif use_lowrank:
        # (μI + BBᵀ)⁻¹1 = (1 - B(μI_r + BᵀB)⁻¹Bᵀ1) / μ
        K = np.einsum('imr,ims->irs', B, B) + mu[:, None, None] * np.eye(r)
        s = np.linalg.solve(K, B.sum(axis=1)[..., None])[..., 0]
        u = (ones - np.einsum('imr,ir->im', B, s)) / mu[:, None]
    else:
        L = np.einsum('imr,ijr->imj', B, B) + mu[:, None, None] * np.eye(m)
        u = np.linalg.solve(L, ones[..., None])[..., 0]
    total = u.sum(axis=1)
    return u / total[:, None], total


def _solve_rows(sources, params: HyperParams, rows: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    B = _difference_blocks(sources, rows, neighbors)
    try:
        weights, total = _solve_block(B, params.lam, params.xi, params.solver)
    except np.linalg.LinAlgError as error:
        # locate the offending row
        for pos, i in enumerate(rows):
            try:
                _solve_block(B[pos:pos + 1], params.lam, params.xi, params.solver)
            except np.linalg.LinAlgError as e:
                raise NumericalError(f"weight system for instance {i} is singular: {e}") from e
        raise NumericalError(
            f"weight systems for instances {rows[0]}..{rows[-1]} failed to solve: {error}") from error
    bad = ~np.isfinite(weights).all(axis=1) | (np.abs(total) < np.finfo(float).tiny)
    if np.any(bad):
        i = rows[np.flatnonzero(bad)[0]]
        raise NumericalError(f"weight system for instance {i} is numerically singular")
    return weights


def _full_neighbors(rows: np.ndarray, n: int) -> np.ndarray:
    base = np.arange(n - 1)[None, :]
    return base + (base >= rows[:, None])


def solve_weight_row(dataset: Dataset, states: Sequence[LabelState], params: HyperParams, i: int,
                     neighbors: Optional[np.ndarray] = None) -> np.ndarray:
    """Length-n weight row for instance i; zero outside its neighbor set"""
    if neighbors is None:
        neighbors = neighbor_set(dataset, i, params.neighborhood)
    neighbors = np.asarray(neighbors)
    weights = _solve_rows(_sources(dataset, states, params), params, np.array([i]), neighbors[None, :])
    row = np.zeros(dataset.n)
    row[neighbors] = weights[0]
    return row


def assemble_weight_matrix(rows) -> WeightGraph:
    """Stack weight rows into a WeightGraph, checking zero diagonal and unit row sums"""
    W = np.array(np.vstack(rows), dtype=float)
    n = W.shape[0]
    if W.shape != (n, n):
        raise DataError(f"weight rows must form a square matrix, got shape {W.shape}")
    if np.any(np.diag(W) != 0):
        i = int(np.flatnonzero(np.diag(W))[0])
        raise DataError(f"weight row {i} reconstructs from itself")
    deviation = np.abs(W.sum(axis=1) - 1.0)
    if np.any(deviation > ROW_SUM_TOL):
        i = int(np.argmax(deviation))
        raise DataError(f"weight row {i} sums to {W[i].sum():.12g}, expected 1")
    W.setflags(write=False)
    degrees = W.sum(axis=0)
    degrees.setflags(write=False)
    return WeightGraph(W=W, degrees=degrees)


def build_weight_graph(dataset: Dataset, states: Sequence[LabelState], params: HyperParams,
                       neighbors: Optional[np.ndarray] = None) -> WeightGraph:
    """Rebuild all of W from the current views and soft labels.

    Rows are solved in blocks; with ``params.workers > 1`` the blocks run on a thread pool
    and are merged back in row order.
    """
    n = dataset.n
    sources = _sources(dataset, states, params)
    if neighbors is None and params.neighborhood != "full":
        neighbors = neighbor_table(dataset, params.neighborhood)
    m = n - 1 if neighbors is None else neighbors.shape[1]
    r = sum(matrix.shape[1] for _, matrix in sources)
    dense = params.solver == "dense" or (params.solver == "auto" and r >= m)
    per_block = max(1, BLOCK_ELEMENTS // (m * max(r, m if dense else 1)))
    blocks = [np.arange(start, min(start + per_block, n)) for start in range(0, n, per_block)]

    def solve(rows: np.ndarray) -> np.ndarray:
        nbrs = _full_neighbors(rows, n) if neighbors is None else neighbors[rows]
        weights = _solve_rows(sources, params, rows, nbrs)
        out = np.zeros((len(rows), n))
        np.put_along_axis(out, nbrs, weights, axis=1)
        return out

    if params.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=min(params.workers, len(blocks))) as executor:
            parts = list(executor.map(solve, blocks))
    else:
        parts = [solve(rows) for rows in blocks]
    return assemble_weight_matrix(parts)


def node_regularizer(Y, labeled_degrees) -> np.ndarray:
    """Diagonal of V with v_i = d_i / (degree mass of i's class), so columns of V·Y sum to 1"""
    Y = np.asarray(Y, dtype=float)
    d = np.asarray(labeled_degrees, dtype=float)
    mass = Y.T @ d
    empty = np.flatnonzero(np.abs(mass) <= MASS_TOL)
    if empty.size:
        raise DataError(
            f"class {int(empty[0]) + 1} has no degree mass among its labeled instances; "
            f"set degree_scope: all (or use a larger neighborhood)")
    return d / (Y @ mass)


def labeled_degrees(graph: WeightGraph, state: LabelState, scope: str = "labeled") -> np.ndarray:
    """Degrees of the labeled instances, in labeled_idx order.

    "labeled" sums each labeled column over the labeled rows only; "all" uses the full
    column sums of W.
    """
    idx = state.labeled_idx
    if scope == "all":
        return graph.degrees[idx]
    return graph.W[np.ix_(idx, idx)].sum(axis=0)


def apply_node_regularizer(graph: WeightGraph, states: Sequence[LabelState],
                           params: HyperParams) -> List[LabelState]:
    """Recompute V from the current degrees (or V = 1 when regularization is off)"""
    updated = []
    for state in states:
        if params.regularize:
            v = node_regularizer(state.Y, labeled_degrees(graph, state, params.degree_scope))
        else:
            v = np.ones(state.n_labeled)
        updated.append(state.with_regularizer(v))
    return updated


def objective(dataset: Dataset, states: Sequence[LabelState], params: HyperParams,
              graph: WeightGraph) -> float:
    """Feature + label reconstruction error plus λ‖W‖², with the γ fitting penalty when finite"""
    A = np.eye(graph.n) - graph.W
    value = sum(a * np.sum((A @ view) ** 2) for a, view in zip(params.alphas, dataset.views))
    for b, state in zip(params.betas, states):
        value += b * np.sum((A @ state.F) ** 2)
        if np.isfinite(params.gamma):
            value += b * params.gamma * np.sum((state.F[state.labeled_idx] - state.vy) ** 2)
    return float(value + params.lam * np.sum(graph.W ** 2))
