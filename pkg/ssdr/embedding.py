"""Spectral embedding from a learnt weight graph"""
import logging
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np
import scipy.linalg

from ssdr.inference import InferenceResult, run_learner
from ssdr.model import DataError, Dataset, Embedding, HyperParams, NumericalError, WeightGraph

logger = logging.getLogger(__name__)

SIGN_TOL = 1e-12


@dataclass(frozen=True)
class EmbeddingCostMatrix:
    """M = (I-W)ᵀ(I-W)"""
    M: np.ndarray


def embedding_cost_matrix(graph: WeightGraph) -> EmbeddingCostMatrix:
    A = np.eye(graph.n) - np.asarray(graph.W)
    M = A.T @ A
    return EmbeddingCostMatrix(M=(M + M.T) / 2)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first nonzero component of every column positive"""
    vectors = np.array(vectors, copy=True)
    for c in range(vectors.shape[1]):
        nonzero = np.flatnonzero(np.abs(vectors[:, c]) > SIGN_TOL)
        if nonzero.size and vectors[nonzero[0], c] < 0:
            vectors[:, c] = -vectors[:, c]
    return vectors


def spectral_embed(cost: EmbeddingCostMatrix, d: int) -> Embedding:
    """Coordinates from the d smallest eigenvectors of M orthogonal to the constant vector.

    The constant vector is the trivial bottom eigenvector (M1 = 0). The eigenproblem is
    solved on its orthogonal complement so that a repeated zero eigenvalue still yields
    coordinates orthogonal to 1.
    """
    M = np.asarray(cost.M, dtype=float)
    n = M.shape[0]
    if not 1 <= d <= n - 1:
        raise DataError(f"embedding dimension must lie in 1..{n - 1}, got {d}")
    basis = scipy.linalg.null_space(np.ones((1, n)))
    reduced = basis.T @ M @ basis
    try:
        values, vectors = scipy.linalg.eigh((reduced + reduced.T) / 2, subset_by_index=[0, d - 1])
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"eigendecomposition failed: {e}") from e
    coords = _fix_signs(basis @ vectors)
    return Embedding(coords=coords, cost=float(values.sum()), eigenvalues=values)


def embedding_cost(graph: WeightGraph, coords: np.ndarray) -> float:
    """Σ_i ‖x̂_i - Σ_j W_ij x̂_j‖²"""
    residual = coords - np.asarray(graph.W) @ coords
    return float(np.sum(residual ** 2))


def learn_and_embed(dataset: Dataset, params: HyperParams, dim: int,
                    rounds: int = 1) -> Tuple[WeightGraph, List[InferenceResult], Embedding]:
    """Learn W, embed, and optionally repeat with the embedding as the only view"""
    if rounds < 1:
        raise DataError("rounds must be at least 1")
    current, current_params = dataset, params
    for r in range(rounds):
        graph, results = run_learner(current, current_params)
        embedding = spectral_embed(embedding_cost_matrix(graph), dim)
        logger.info("Embedding round %d/%d: cost %.6g", r + 1, rounds, embedding.cost)
        current = dataset.with_views([embedding.coords])
        current_params = replace(params, alphas=(1.0,))
    return graph, results, embedding
