"""Trial orchestration: mask, select by CP, learn, score, persist"""
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ssdr.config import ExperimentConfig
from ssdr.data_io import (
    load_table,
    mask_labels,
    normalize_rows,
    save_matrix,
    split_views,
    standardize_columns,
)
from ssdr.embedding import embedding_cost_matrix, spectral_embed
from ssdr.evaluation import (
    MetricReport,
    TrialMetrics,
    cp_score,
    error_rate,
    f1_micro,
    given_label_cp,
    normalize_for_plot,
    select_params_by_cp,
)
from ssdr.inference import InferenceResult, run_learner
from ssdr.model import DataError, Dataset, HyperParams, SsdrError, WeightGraph, validate_dataset

logger = logging.getLogger(__name__)

TRIALS_FILE = "trials.jsonl"
SUMMARY_FILE = "summary.json"


@dataclass(frozen=True)
class ExperimentData:
    """Fully labeled views and truth, before any masking"""
    views: Tuple[np.ndarray, ...]
    truth: np.ndarray
    class_names: Tuple[Tuple[str, ...], ...]

    @property
    def n_classes(self) -> Tuple[int, ...]:
        return tuple(len(names) for names in self.class_names)


@dataclass
class TrialRecord:
    """Everything one trial produced; ``wall_time`` is the only nondeterministic field"""
    trial: int
    seed: int
    params: Dict[str, Any]
    error_rate: float
    f1_micro: float
    cp_off_diagonal_sum: float
    cp_score: float
    iterations: int
    n_hidden: int
    grid_scores: List[float] = field(default_factory=list)
    grid_scores_normalized: List[float] = field(default_factory=list)
    grid_best_index: Optional[int] = None
    wall_time: float = 0.0

    @property
    def metrics(self) -> TrialMetrics:
        return TrialMetrics(seed=self.seed, error_rate=self.error_rate,
                            f1_micro=self.f1_micro, cp_off_diagonal_sum=self.cp_off_diagonal_sum)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def params_to_dict(params: HyperParams) -> Dict[str, Any]:
    data = asdict(params)
    data['alphas'] = list(params.alphas)
    data['betas'] = list(params.betas)
    data['gamma'] = 'inf' if math.isinf(params.gamma) else params.gamma
    return data


def _prepare_view(view: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    if config.data.standardize:
        view = standardize_columns(view)
    if config.data.normalize:
        view = normalize_rows(view)
    return view


def load_experiment_data(config: ExperimentConfig) -> ExperimentData:
    """Read the configured files and split them into views.

    One path is split with ``view_split``; several paths give one view per file, and every
    file must carry the same labels.
    """
    paths = config.data_paths()
    tables = [load_table(p, delimiter=config.data.delimiter, label_columns=config.data.label_columns)
              for p in paths]
    first = tables[0]
    if len(tables) > 1:
        for path, table in zip(paths[1:], tables[1:]):
            if table.class_names != first.class_names or not np.array_equal(table.labels, first.labels):
                raise DataError(f"labels in {path} differ from {paths[0]}")
        views = [t.features for t in tables]
    else:
        views = split_views(first.features, config.view_split)
    views = tuple(_prepare_view(v, config) for v in views)
    logger.info("Experiment data: n=%d, %d view(s) of widths %s, %d task(s)",
                first.labels.shape[0], len(views), [v.shape[1] for v in views], first.labels.shape[1])
    return ExperimentData(views=views, truth=first.labels, class_names=first.class_names)


def score_hidden(results: Sequence[InferenceResult], truth: np.ndarray,
                 hidden: np.ndarray) -> Tuple[float, float]:
    """(error rate, micro-F1) over the hidden entries of every task"""
    predicted = [r.predictions[hidden[:, k]] for k, r in enumerate(results)]
    actual = [truth[hidden[:, k], k] for k in range(truth.shape[1])]
    return (error_rate(np.concatenate(predicted), np.concatenate(actual)),
            f1_micro(predicted, actual))


def _write_artifacts(trial_dir: Path, graph: WeightGraph, results: Sequence[InferenceResult],
                     embedding: Optional[np.ndarray], save_all: bool) -> None:
    if save_all:
        save_matrix(trial_dir / "W.csv", graph.W)
        for k, result in enumerate(results):
            save_matrix(trial_dir / f"F_task{k}.csv", result.soft_f)
    if embedding is not None:
        save_matrix(trial_dir / "embedding.csv", embedding)


def run_trial(config: ExperimentConfig, data: ExperimentData, trial: int, workers: int = 1,
              out_dir: Optional[Path] = None, save_artifacts: bool = False) -> TrialRecord:
    """Mask with seed + trial, optionally pick parameters by CP, learn and score"""
    started = time.perf_counter()
    seed = config.seed + trial
    masked, hidden = mask_labels(data.truth, config.label_fraction, seed)
    dataset = validate_dataset(list(data.views), masked, data.n_classes, data.class_names)
    params = config.hyper_params(dataset.q, dataset.p, workers=workers)
    params.check_against(dataset)

    grid_scores: List[float] = []
    best_index = None
    if config.cp_grid:
        selection = select_params_by_cp(dataset, config.cp_grid, params)
        params = selection.best
        graph, results = selection.runs[selection.best_index]
        grid_scores = list(selection.scores)
        best_index = selection.best_index
    else:
        graph, results = run_learner(dataset, params)

    err, f1 = score_hidden(results, data.truth, hidden)
    report = given_label_cp(dataset, graph, params.z)
    embedding = None
    if config.embed_dim is not None:
        embedding = spectral_embed(embedding_cost_matrix(graph), config.embed_dim).coords
    if out_dir is not None and (save_artifacts or embedding is not None):
        _write_artifacts(out_dir / f"trial_{trial:03d}", graph, results, embedding, save_artifacts)

    record = TrialRecord(
        trial=trial,
        seed=seed,
        params=params_to_dict(replace(params, workers=1)),
        error_rate=err,
        f1_micro=f1,
        cp_off_diagonal_sum=report.off_diagonal_sum,
        cp_score=cp_score(report),
        iterations=max(r.iterations for r in results),
        n_hidden=int(hidden.sum()),
        grid_scores=grid_scores,
        grid_scores_normalized=normalize_for_plot(grid_scores),
        grid_best_index=best_index,
        wall_time=time.perf_counter() - started,
    )
    logger.info("Trial %d (seed %d): error %.4f, micro-F1 %.4f", trial, seed, err, f1)
    return record


def summarize(config: ExperimentConfig, records: Sequence[TrialRecord]) -> Dict[str, Any]:
    """Deterministic summary: aggregate metrics plus per-trial grid scores, no timing"""
    report = MetricReport(per_trial=[r.metrics for r in records])
    summary = report.summary()
    summary['config'] = config.to_dict()
    summary['per_trial'] = [
        {
            'trial': r.trial,
            'seed': r.seed,
            'error_rate': r.error_rate,
            'f1_micro': r.f1_micro,
            'cp_off_diagonal_sum': r.cp_off_diagonal_sum,
            'grid_best_index': r.grid_best_index,
            'grid_scores': r.grid_scores,
            'grid_scores_normalized': r.grid_scores_normalized,
        }
        for r in records
    ]
    return summary


def write_results(out_dir: Path, config: ExperimentConfig, records: Sequence[TrialRecord]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / TRIALS_FILE, 'w') as f:
        for record in records:
            f.write(record.to_json() + "\n")
    with open(out_dir / SUMMARY_FILE, 'w') as f:
        json.dump(summarize(config, records), f, indent=2, sort_keys=True)
        f.write("\n")


def run_experiment(config: ExperimentConfig, workers: int = 1, out_dir: Union[str, Path, None] = None,
                   save_artifacts: bool = False) -> Tuple[MetricReport, List[TrialRecord]]:
    """Run every trial and write ``trials.jsonl`` and ``summary.json``.

    With ``workers > 1`` trials run concurrently and records are merged in trial order.
    When a trial fails, the records that completed before it are written, then the
    error propagates.
    """
    out_dir = Path(out_dir) if out_dir is not None else config.output_dir()
    data = load_experiment_data(config)
    logger.info("Running %d trial(s), %.1f%% labeled, writing to %s",
                config.trials, 100 * config.label_fraction, out_dir)

    records: List[TrialRecord] = []
    try:
        if workers > 1 and config.trials > 1:
            with ThreadPoolExecutor(max_workers=min(workers, config.trials)) as executor:
                futures = [executor.submit(run_trial, config, data, t, 1, out_dir, save_artifacts)
                           for t in range(config.trials)]
                for future in futures:
                    records.append(future.result())
        else:
            for t in range(config.trials):
                records.append(run_trial(config, data, t, workers, out_dir, save_artifacts))
    except SsdrError as e:
        write_results(out_dir, config, records)
        logger.error("Aborted after %d of %d trial(s); partial results in %s",
                     len(records), config.trials, out_dir)
        raise type(e)(f"Failed to run trial {len(records)}: {e}") from e

    write_results(out_dir, config, records)
    report = MetricReport(per_trial=[r.metrics for r in records])
    logger.info("Finished: error %.4f ± %.4f, micro-F1 %.4f ± %.4f",
                report.mean('error_rate'), report.std('error_rate'),
                report.mean('f1_micro'), report.std('f1_micro'))
    return report, records
