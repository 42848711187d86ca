"""Tests for the reconstruction-weight solve, conditioning and the node regularizer"""
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ortho_group

sys.path.insert(0, str(Path(__file__).parent))

from ssdr import weights
from ssdr.fixtures import random_instance, random_weight_graph
from ssdr.model import (
    DataError,
    HyperParams,
    NumericalError,
    initial_label_states,
    label_states,
    validate_dataset,
)
from ssdr.oracles import kkt_weight_row
from ssdr.weights import (
    EPS_ABS,
    apply_node_regularizer,
    assemble_weight_matrix,
    build_weight_graph,
    condition_system,
    labeled_degrees,
    local_covariance,
    mixed_local_system,
    neighbor_set,
    neighbor_table,
    node_regularizer,
    objective,
    solve_weight_row,
)


def _random_problem(seed, n=8, d=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    labels = np.zeros(n, dtype=int)
    labels[:4] = [1, 2, 1, 2]
    return validate_dataset([X], [labels])


class TestNeighborSet:

    def test_full_neighborhood(self):
        dataset = validate_dataset([np.zeros((4, 1))], [1, 2, 0, 0])
        np.testing.assert_array_equal(neighbor_set(dataset, 1, "full"), [0, 2, 3])

    def test_nearest_point(self):
        dataset = validate_dataset([np.array([[0.0], [1.0], [10.0]])], [1, 2, 0])
        np.testing.assert_array_equal(neighbor_set(dataset, 1, 1), [0])

    def test_k_equal_n_rejected(self):
        dataset = validate_dataset([np.zeros((3, 1))], [1, 2, 0])
        with pytest.raises(DataError):
            neighbor_set(dataset, 0, 3)

    def test_ties_go_to_lower_index(self):
        dataset = validate_dataset([np.array([[0.0], [1.0], [-1.0]])], [1, 2, 0])
        np.testing.assert_array_equal(neighbor_set(dataset, 0, 1), [1])

    def test_never_contains_center(self):
        dataset = _random_problem(3, n=12)
        table = neighbor_table(dataset, 4)
        assert table.shape == (12, 4)
        for i, row in enumerate(table):
            assert i not in row


class TestLocalCovariance:

    def test_identical_neighbors(self):
        C = local_covariance([1.0, 2.0], [[1.0, 2.0], [1.0, 2.0]])
        np.testing.assert_array_equal(C.matrix, np.zeros((2, 2)))

    def test_mirror_neighbors(self):
        C = local_covariance([0.0], [[1.0], [-1.0]])
        np.testing.assert_array_equal(C.matrix, [[1, -1], [-1, 1]])

    def test_translation(self):
        rng = np.random.default_rng(1)
        center, neighbors = rng.normal(size=3), rng.normal(size=(4, 3))
        shift = rng.normal(size=3)
        np.testing.assert_allclose(local_covariance(center + shift, neighbors + shift).matrix,
                                   local_covariance(center, neighbors).matrix, atol=1e-12)

    def test_symmetric_psd(self):
        rng = np.random.default_rng(2)
        C = local_covariance(rng.normal(size=4), rng.normal(size=(6, 4))).matrix
        np.testing.assert_allclose(C, C.T, atol=1e-12)
        assert np.linalg.eigvalsh(C).min() >= -1e-10


class TestConditionSystem:

    def test_identity(self):
        np.testing.assert_allclose(condition_system(np.eye(2), 0.01, 2), 1.01 * np.eye(2))

    def test_zero_trace_floor(self):
        np.testing.assert_array_equal(condition_system(np.zeros((3, 3)), 0.01), EPS_ABS * np.eye(3))

    def test_no_shift_without_xi(self):
        L = np.array([[2.0, 0.5], [0.5, 1.0]])
        np.testing.assert_array_equal(condition_system(L, 0.0), L)


class TestSolveWeightRow:

    def test_mirror_symmetry(self):
        dataset = validate_dataset([np.array([[0.0], [1.0], [-1.0]])], [0, 1, 2])
        states = initial_label_states(dataset)
        for lam in (0.01, 1.0):
            row = solve_weight_row(dataset, states, HyperParams(lam=lam), 0)
            np.testing.assert_allclose(row, [0.0, 0.5, 0.5], atol=1e-12)

    def test_uniform_when_lambda_dominates(self):
        dataset = _random_problem(0)
        params = HyperParams(alphas=(0.0,), betas=(0.0,), lam=1.0)
        row = solve_weight_row(dataset, initial_label_states(dataset), params, 2)
        expected = np.full(8, 1 / 7)
        expected[2] = 0.0
        np.testing.assert_allclose(row, expected, atol=1e-12)

    def test_zero_outside_neighbors(self):
        dataset = _random_problem(1, n=10)
        params = HyperParams(neighborhood=3)
        row = solve_weight_row(dataset, initial_label_states(dataset), params, 4)
        outside = np.setdiff1d(np.arange(10), neighbor_set(dataset, 4, 3))
        np.testing.assert_array_equal(row[outside], 0.0)
        assert row.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_kkt_oracle(self):
        worst = 0.0
        for seed in range(200):
            dataset, states, params = random_instance(seed)
            for i in range(dataset.n):
                row = solve_weight_row(dataset, states, params, i)
                reference = kkt_weight_row(dataset, states, params, i)
                worst = max(worst, float(np.max(np.abs(row - reference))))
        assert worst <= 1e-8

    def test_lowrank_matches_dense(self):
        for seed in range(50):
            dataset, states, params = random_instance(seed)
            lowrank = build_weight_graph(dataset, states, replace(params, solver="lowrank"))
            dense = build_weight_graph(dataset, states, replace(params, solver="dense"))
            np.testing.assert_allclose(lowrank.W, dense.W, atol=1e-8)

    def test_mixed_system_positive_definite(self):
        dataset, states, params = random_instance(7)
        system = mixed_local_system(dataset, states, params, 0)
        np.testing.assert_allclose(system.L, system.L.T, atol=1e-12)
        assert np.linalg.eigvalsh(system.L).min() > 0


class TestInvariances:

    def _graph(self, views, params=HyperParams()):
        dataset = validate_dataset(views, [[1, 2, 1, 2, 0, 0, 0, 0]])
        return build_weight_graph(dataset, initial_label_states(dataset), params).W

    def test_rotation(self):
        X = np.random.default_rng(4).normal(size=(8, 3))
        Q = ortho_group.rvs(3, random_state=4)
        np.testing.assert_allclose(self._graph([X @ Q]), self._graph([X]), atol=1e-10)

    def test_translation(self):
        X = np.random.default_rng(5).normal(size=(8, 3))
        np.testing.assert_allclose(self._graph([X + [3.0, -1.0, 7.0]]), self._graph([X]), atol=1e-10)

    def test_rescaling_with_compensated_alpha(self):
        X = np.random.default_rng(6).normal(size=(8, 3))
        base = self._graph([X], HyperParams(alphas=(1.0,)))
        scaled = self._graph([2.0 * X], HyperParams(alphas=(0.25,)))
        np.testing.assert_allclose(scaled, base, atol=1e-10)


class TestAssembleWeightMatrix:

    def test_swap(self):
        graph = assemble_weight_matrix([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(graph.degrees, [1.0, 1.0])

    def test_bad_row_sum(self):
        with pytest.raises(DataError, match="sums to"):
            assemble_weight_matrix([[0.0, 0.9], [1.0, 0.0]])

    def test_uniform_rows(self):
        W = (np.ones((3, 3)) - np.eye(3)) / 2
        np.testing.assert_allclose(assemble_weight_matrix(W).degrees, [1.0, 1.0, 1.0])

    def test_self_weight_rejected(self):
        with pytest.raises(DataError):
            assemble_weight_matrix([[0.5, 0.5], [1.0, 0.0]])

    def test_learnt_graph_is_row_stochastic(self):
        for seed in range(20):
            dataset, states, params = random_instance(seed)
            W = build_weight_graph(dataset, states, params).W
            np.testing.assert_array_equal(np.diag(W), 0.0)
            np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-10)

    def test_threaded_blocks_match(self, monkeypatch):
        monkeypatch.setattr(weights, "BLOCK_ELEMENTS", 500)
        dataset = _random_problem(8, n=30)
        states = initial_label_states(dataset)
        serial = build_weight_graph(dataset, states, HyperParams())
        threaded = build_weight_graph(dataset, states, HyperParams(workers=4))
        np.testing.assert_allclose(threaded.W, serial.W, rtol=0, atol=1e-12)

    def test_block_failure_becomes_numerical_error(self, monkeypatch):
        solve_block = weights._solve_block

        def failing(B, *args):
            if B.shape[0] > 1:
                raise np.linalg.LinAlgError("Singular matrix")
            return solve_block(B, *args)

        monkeypatch.setattr(weights, "_solve_block", failing)
        dataset = _random_problem(11)
        with pytest.raises(NumericalError, match="failed to solve"):
            build_weight_graph(dataset, initial_label_states(dataset), HyperParams())


class TestNodeRegularizer:

    def test_class_sizes(self):
        Y = np.array([[1, 0], [1, 0], [0, 1], [0, 1], [0, 1]])
        np.testing.assert_allclose(node_regularizer(Y, np.ones(5)), [0.5, 0.5, 1 / 3, 1 / 3, 1 / 3])

    def test_single_label_per_class(self):
        np.testing.assert_allclose(node_regularizer(np.eye(3), [0.2, 0.7, 1.3]), [1.0, 1.0, 1.0])

    def test_columns_sum_to_one(self):
        rng = np.random.default_rng(9)
        Y = np.eye(3)[rng.integers(0, 3, size=12)]
        Y[:3] = np.eye(3)
        v = node_regularizer(Y, rng.uniform(0.1, 2.0, size=12))
        np.testing.assert_allclose((v[:, None] * Y).sum(axis=0), 1.0)

    def test_zero_mass_rejected(self):
        with pytest.raises(DataError, match="no degree mass"):
            node_regularizer(np.eye(2), [1.0, 0.0])

    def test_zero_mass_names_the_scope_switch(self):
        with pytest.raises(DataError, match="degree_scope: all"):
            node_regularizer(np.eye(2), [0.0, 1.0])

    def test_degree_scopes(self):
        graph = random_weight_graph(6, 3)
        state = label_states([[1, 2, 0, 1, 0, 0]])[0]
        idx = state.labeled_idx
        np.testing.assert_allclose(labeled_degrees(graph, state, "all"), graph.W.sum(axis=0)[idx])
        np.testing.assert_allclose(labeled_degrees(graph, state, "labeled"),
                                   graph.W[np.ix_(idx, idx)].sum(axis=0))

    def test_apply_keeps_given_rows(self):
        dataset = _random_problem(10)
        states = initial_label_states(dataset)
        graph = build_weight_graph(dataset, states, HyperParams())
        for state in apply_node_regularizer(graph, states, HyperParams(degree_scope="all")):
            np.testing.assert_allclose(state.vy.sum(axis=0), 1.0)
            np.testing.assert_allclose(state.F[state.labeled_idx], state.vy)


class TestWeightDescent:

    def test_rebuild_does_not_increase_objective(self):
        for seed in range(20):
            dataset, states, params = random_instance(seed)
            params = replace(params, xi=0.0, neighborhood="full")
            start = random_weight_graph(dataset.n, seed)
            learnt = build_weight_graph(dataset, states, params)
            assert objective(dataset, states, params, learnt) <= objective(dataset, states, params, start) + 1e-12

    def test_single_row_replacement(self):
        for seed in range(20):
            dataset, states, params = random_instance(seed)
            params = replace(params, xi=0.0, neighborhood="full")
            start = random_weight_graph(dataset.n, seed + 100)
            i = seed % dataset.n
            W = np.array(start.W)
            W[i] = solve_weight_row(dataset, states, params, i)
            before = objective(dataset, states, params, start)
            after = objective(dataset, states, params, assemble_weight_matrix(W))
            assert after <= before * (1 + 1e-9)
