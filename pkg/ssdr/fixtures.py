"""Synthetic datasets and small graphs with known answers"""
from typing import List, Tuple

import numpy as np

from ssdr.data_io import mask_labels
from ssdr.model import (
    MISSING,
    Dataset,
    HyperParams,
    LabelState,
    WeightGraph,
    initial_label_states,
    validate_dataset,
)
from ssdr.weights import assemble_weight_matrix


def _blob_points(rng: np.random.Generator, n: int, separation: float,
                 spread: float) -> Tuple[np.ndarray, np.ndarray]:
    truth = np.repeat([1, 2], [n - n // 2, n // 2])
    centers = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
    points = centers[truth - 1] + spread * rng.standard_normal((n, 2))
    return points, truth


def two_blobs(n: int = 40, labeled_per_class: int = 2, seed: int = 0, separation: float = 6.0,
              spread: float = 0.5) -> Tuple[Dataset, np.ndarray]:
    """Two 2-D Gaussian blobs, one class each, with a few labels per class.

    Returns the masked dataset and the full truth column.
    """
    rng = np.random.default_rng(seed)
    points, truth = _blob_points(rng, n, separation, spread)
    labels = np.full(n, MISSING)
    for c in (1, 2):
        chosen = rng.choice(np.flatnonzero(truth == c), size=labeled_per_class, replace=False)
        labels[chosen] = c
    return validate_dataset([points], labels), truth


def correlated_tasks(n: int = 200, noise: float = 0.1, label_fraction: float = 0.1, seed: int = 0,
                     separation: float = 3.0, spread: float = 1.0,
                     disjoint: bool = False) -> Tuple[Dataset, np.ndarray]:
    """Two tasks over two overlapping 2-D blobs; task 2 is task 1 with a share of labels flipped.

    With ``disjoint`` the task-2 labels are kept only on instances whose task-1 label is
    hidden. Returns the masked dataset and the n×2 truth matrix.
    """
    rng = np.random.default_rng(seed)
    points, first = _blob_points(rng, n, separation, spread)
    second = first.copy()
    flipped = rng.choice(n, size=int(round(noise * n)), replace=False)
    second[flipped] = 3 - second[flipped]
    truth = np.column_stack([first, second])
    if disjoint:
        kept_first, _ = mask_labels(first, label_fraction, seed)
        pool = np.where(kept_first[:, 0] != MISSING, MISSING, second)
        kept_second, _ = mask_labels(pool, label_fraction, seed + 1)
        masked = np.column_stack([kept_first[:, 0], kept_second[:, 0]])
    else:
        masked, _ = mask_labels(truth, label_fraction, seed)
    return validate_dataset([points], masked, (2, 2)), truth


def six_node_graph() -> Tuple[WeightGraph, np.ndarray]:
    """Two disconnected 3-node cliques with uniform intra-clique weights.

    Node 0 carries class 1 and node 3 class 2; the rest are unlabeled.
    """
    W = np.zeros((6, 6))
    for clique in ((0, 1, 2), (3, 4, 5)):
        for i in clique:
            for j in clique:
                if i != j:
                    W[i, j] = 0.5
    labels = np.array([1, MISSING, MISSING, 2, MISSING, MISSING])
    return assemble_weight_matrix(W), labels


def random_weight_graph(n: int, seed: int, negative: float = 0.2) -> WeightGraph:
    """Dense row-stochastic W with zero diagonal and some negative entries"""
    rng = np.random.default_rng(seed)
    W = rng.uniform(-negative, 1.0, size=(n, n))
    np.fill_diagonal(W, 0.0)
    W /= W.sum(axis=1, keepdims=True)
    # exact unit row sums after division
    W[np.arange(n), (np.arange(n) + 1) % n] += 1.0 - W.sum(axis=1)
    return assemble_weight_matrix(W)


def random_labels(rng: np.random.Generator, n: int, c: int, n_labeled: int) -> np.ndarray:
    """Label column with ``n_labeled`` observed entries covering every class"""
    labels = np.full(n, MISSING)
    chosen = rng.choice(n, size=n_labeled, replace=False)
    labels[chosen] = np.concatenate([np.arange(1, c + 1), rng.integers(1, c + 1, size=n_labeled - c)])
    return labels


def random_instance(seed: int, max_n: int = 10, max_d: int = 5, max_p: int = 2,
                    max_q: int = 2) -> Tuple[Dataset, List[LabelState], HyperParams]:
    """A small random problem with soft labels already filled in for the unlabeled rows"""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, max_n + 1))
    q = int(rng.integers(1, max_q + 1))
    p = int(rng.integers(1, max_p + 1))
    views = [rng.standard_normal((n, int(rng.integers(1, max_d + 1)))) for _ in range(q)]
    tasks = [random_labels(rng, n, 2, int(rng.integers(2, n))) for _ in range(p)]
    dataset = validate_dataset(views, tasks)

    states = []
    for state in initial_label_states(dataset):
        F = np.array(state.F)
        F[state.unlabeled_idx] = rng.uniform(0.0, 1.0, size=(state.n_unlabeled, state.n_classes))
        states.append(state.with_soft_labels(F))

    neighborhood = "full" if rng.random() < 0.5 else int(rng.integers(1, n))
    params = HyperParams(
        alphas=tuple(rng.uniform(0.1, 1.0, size=q)),
        betas=tuple(rng.uniform(0.0, 1.0, size=p)),
        lam=float(rng.uniform(0.01, 1.0)),
        xi=float(rng.uniform(0.0, 1e-3)),
        neighborhood=neighborhood,
    )
    return dataset, states, params
