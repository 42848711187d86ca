"""Command line entry point"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional

import numpy as np

from ssdr import oracles
from ssdr.config import ConfigError, ExperimentConfig
from ssdr.data_io import load_labels, load_matrix, save_matrix
from ssdr.embedding import embedding_cost_matrix, spectral_embed
from ssdr.evaluation import cross_propagation
from ssdr.experiment import run_experiment
from ssdr.fixtures import random_instance, random_weight_graph, six_node_graph, two_blobs
from ssdr.inference import (
    expanded_labels,
    infer_closed_form,
    relaxed_select,
    run_batch,
    select_most_confident,
)
from ssdr.model import DataError, HyperParams, NumericalError, SsdrError, label_states, signed_label_matrix
from ssdr.weights import assemble_weight_matrix, solve_weight_row

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

ORACLE_TOL = 1e-8


def _print_json(data: Dict[str, Any]) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    report, records = run_experiment(config, workers=args.workers, out_dir=args.out,
                                     save_artifacts=args.save_artifacts)
    _print_json(report.summary())
    return EXIT_OK


def cmd_embed(args) -> int:
    graph = assemble_weight_matrix(load_matrix(args.weights))
    embedding = spectral_embed(embedding_cost_matrix(graph), args.dim)
    save_matrix(args.out, embedding.coords)
    _print_json({'cost': embedding.cost, 'eigenvalues': embedding.eigenvalues.tolist(), 'out': args.out})
    return EXIT_OK


def cmd_cp(args) -> int:
    graph = assemble_weight_matrix(load_matrix(args.weights))
    labels = load_labels(args.labels)
    if labels.shape[0] != graph.n:
        raise DataError(f"{labels.shape[0]} label rows for a {graph.n}-node graph")
    report = cross_propagation(graph, signed_label_matrix(label_states(labels)), args.z)
    _print_json({
        'matrix': report.matrix.tolist(),
        'off_diagonal_sum': report.off_diagonal_sum,
        'diagonal_sum': report.diagonal_sum,
    })
    return EXIT_OK


def _six_node_checks() -> Dict[str, float]:
    graph, labels = six_node_graph()
    state = label_states([labels])[0]
    F_u = infer_closed_form(graph, state.Y, state.V, state.labeled_idx, state.unlabeled_idx)
    reference = oracles.dense_stationarity_solve(graph.W, state.Y, state.V,
                                                 state.labeled_idx, state.unlabeled_idx)
    signed = signed_label_matrix([state])
    repeated = cross_propagation(graph, signed, 2).expanded

    # the cliques are symmetric, so selection is checked on a random graph of the same size
    skewed = random_weight_graph(6, 1)
    y, v = expanded_labels(state)
    chosen = select_most_confident(skewed, state.V, state.Y, state.labeled_idx, state.unlabeled_idx)
    relaxed = relaxed_select(skewed, v, y, 1.0)
    return {
        'closed_form_vs_dense': float(np.max(np.abs(F_u - reference))),
        'selection_mismatch': float(chosen != oracles.exhaustive_selection(
            skewed.W, state.V, state.Y, state.labeled_idx, state.unlabeled_idx)),
        'relaxed_selection_mismatch': float(relaxed != oracles.relaxed_selection_oracle(skewed.W, v, y, 1.0)),
        'cp_vs_explicit_power': float(np.max(np.abs(
            repeated - oracles.explicit_power_cp(graph.W, signed.matrix, 2)))),
    }


def _random_checks(seeds: int = 200) -> Dict[str, float]:
    worst_kkt = 0.0
    worst_solver = 0.0
    for seed in range(seeds):
        dataset, states, params = random_instance(seed)
        i = seed % dataset.n
        row = solve_weight_row(dataset, states, params, i)
        worst_kkt = max(worst_kkt, float(np.max(np.abs(row - oracles.kkt_weight_row(dataset, states, params, i)))))
        lowrank = solve_weight_row(dataset, states, replace(params, solver="lowrank"), i)
        dense = solve_weight_row(dataset, states, replace(params, solver="dense"), i)
        worst_solver = max(worst_solver, float(np.max(np.abs(lowrank - dense))))
    graph = random_weight_graph(8, 0)
    labels = np.array([1, 2, 0, 0, 1, 0, 0, 0])
    state = label_states([labels])[0]
    F_u = infer_closed_form(graph, state.Y, state.V, state.labeled_idx, state.unlabeled_idx)
    return {
        'weight_row_vs_kkt': worst_kkt,
        'lowrank_vs_dense': worst_solver,
        'stationarity_residual': oracles.stationarity_residual(
            graph.W, F_u, state.Y, state.V, state.labeled_idx, state.unlabeled_idx),
    }


def _two_blob_checks() -> Dict[str, float]:
    dataset, _ = two_blobs(n=30, labeled_per_class=3, seed=0)
    params = HyperParams(alphas=(1.0,), betas=(0.0,), lam=0.1, xi=0.0, neighborhood=5,
                         regularize=False, tol=0.0, max_iters=3)
    _, results = run_batch(dataset, params)
    reference = oracles.earlier_framework_reference(dataset.views[0], dataset.tasks[0], 5, 0.1)
    return {'earlier_framework_deviation': float(np.max(np.abs(results[0].soft_f - reference)))}


ORACLE_FIXTURES = {
    'six-node': _six_node_checks,
    'random': _random_checks,
    'two-blobs': _two_blob_checks,
}


def cmd_oracle(args) -> int:
    deviations = ORACLE_FIXTURES[args.fixture]()
    passed = all(value <= ORACLE_TOL for value in deviations.values())
    _print_json({'fixture': args.fixture, 'deviations': deviations, 'passed': passed})
    return EXIT_OK if passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssdr", description="Multi-task multi-view graph transduction")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log per-iteration detail")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a full experiment")
    run.add_argument("--config", required=True, help="Experiment config (YAML or JSON)")
    run.add_argument("--out", help="Output directory (overrides the config's 'out')")
    run.add_argument("--workers", type=int, default=1, help="Trials run concurrently")
    run.add_argument("--save-artifacts", action="store_true", help="Write W and F for every trial")
    run.set_defaults(handler=cmd_run)

    embed = sub.add_parser("embed", help="Spectral embedding of a saved weight matrix")
    embed.add_argument("--weights", required=True)
    embed.add_argument("--dim", type=int, required=True)
    embed.add_argument("--out", required=True)
    embed.set_defaults(handler=cmd_embed)

    cp = sub.add_parser("cp", help="Cross-propagation report for a weight matrix and labels")
    cp.add_argument("--weights", required=True)
    cp.add_argument("--labels", required=True)
    cp.add_argument("--z", type=int, default=2)
    cp.set_defaults(handler=cmd_cp)

    oracle = sub.add_parser("oracle", help="Compare against the brute-force reference solvers")
    oracle.add_argument("--fixture", required=True, choices=sorted(ORACLE_FIXTURES))
    oracle.set_defaults(handler=cmd_oracle)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command and map errors to exit codes"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except NumericalError as e:
        logger.error("Numerical failure: %s", e)
        return EXIT_NUMERIC
    except (ConfigError, DataError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except SsdrError as e:
        logger.error("%s", e)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
