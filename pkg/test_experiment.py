"""Tests for trial orchestration, result files and the command line"""
import json
import os
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from ssdr import experiment, main as cli
from ssdr.config import ExperimentConfig
from ssdr.data_io import load_matrix, mask_labels, save_matrix
from ssdr.experiment import (
    SUMMARY_FILE,
    TRIALS_FILE,
    load_experiment_data,
    run_experiment,
    run_trial,
    summarize,
)
from ssdr.fixtures import random_weight_graph, two_blobs
from ssdr.model import NumericalError


def _blob_csv(path: Path, n: int = 60, seed: int = 0) -> Path:
    dataset, truth = two_blobs(n=n, seed=seed)
    rows = [f"{x:.17g},{y:.17g},{label}" for (x, y), label in zip(dataset.views[0], truth)]
    path.write_text("\n".join(rows) + "\n")
    return path


def _config(tmp_path: Path, n: int = 60, **overrides) -> Path:
    _blob_csv(tmp_path / "blobs.csv", n=n)
    data = {'data': 'blobs.csv', 'view_split': 'joined', 'label_fraction': 0.1, 'trials': 2,
            'seed': 3, 'degree_scope': 'all', 'out': 'results'}
    data.update(overrides)
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


class TestRunExperiment:

    def test_nearly_all_labeled(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path, n=200, trials=1, label_fraction=0.99))
        report, records = run_experiment(config)
        assert records[0].n_hidden == 2
        assert report.error_rate <= 0.05

    def test_blobs_at_ten_percent(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path, trials=2))
        report, records = run_experiment(config)
        assert [r.seed for r in records] == [3, 4]
        assert all(r.n_hidden == 54 for r in records)
        assert report.error_rate <= 0.15

    def test_result_files(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path))
        _, records = run_experiment(config)
        out = tmp_path / "results"
        lines = (out / TRIALS_FILE).read_text().splitlines()
        assert [json.loads(line)['trial'] for line in lines] == [0, 1]
        summary = json.loads((out / SUMMARY_FILE).read_text())
        assert summary['trials'] == 2
        assert summary['config']['seed'] == 3

    def test_summary_is_byte_identical_on_rerun(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path))
        run_experiment(config, out_dir=tmp_path / "first")
        run_experiment(config, out_dir=tmp_path / "second")
        assert (tmp_path / "first" / SUMMARY_FILE).read_bytes() == (tmp_path / "second" / SUMMARY_FILE).read_bytes()

    def test_summary_matches_records(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path, trials=3))
        _, records = run_experiment(config)
        summary = summarize(config, records)
        errors = np.array([r.error_rate for r in records])
        assert summary['mean']['error_rate'] == float(errors.mean())
        assert summary['std']['error_rate'] == float(errors.std())
        assert summary['per_trial'][2]['error_rate'] == records[2].error_rate

    def test_concurrent_trials_match_serial(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path, trials=3))
        _, serial = run_experiment(config, out_dir=tmp_path / "serial")
        _, threaded = run_experiment(config, workers=3, out_dir=tmp_path / "threaded")
        assert [r.error_rate for r in threaded] == [r.error_rate for r in serial]
        assert [r.trial for r in threaded] == [0, 1, 2]

    def test_cp_grid_recorded(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path, trials=1, cp_grid=[{'lambda': 0.05}, {'lambda': 0.5}]))
        _, records = run_experiment(config)
        record = records[0]
        assert len(record.grid_scores) == 2
        assert record.params['lam'] == [0.05, 0.5][record.grid_best_index]
        assert sorted(record.grid_scores_normalized) == [0.0, 1.0] or record.grid_scores_normalized == [0.0, 0.0]

    def test_artifacts(self, tmp_path):
        config = ExperimentConfig.load(_config(tmp_path, trials=1, embed_dim=2))
        run_experiment(config, save_artifacts=True)
        trial_dir = tmp_path / "results" / "trial_000"
        W = load_matrix(trial_dir / "W.csv")
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-10)
        assert load_matrix(trial_dir / "F_task0.csv").shape == (60, 2)
        assert load_matrix(trial_dir / "embedding.csv").shape == (60, 2)

    def test_partial_results_flushed(self, tmp_path, monkeypatch):
        config = ExperimentConfig.load(_config(tmp_path, trials=3))
        original = experiment.run_trial

        def failing(config, data, trial, *args, **kwargs):
            if trial == 1:
                raise NumericalError("singular")
            return original(config, data, trial, *args, **kwargs)

        monkeypatch.setattr(experiment, "run_trial", failing)
        with pytest.raises(NumericalError, match="Failed to run trial 1"):
            run_experiment(config)
        lines = (tmp_path / "results" / TRIALS_FILE).read_text().splitlines()
        assert len(lines) == 1
        assert json.loads((tmp_path / "results" / SUMMARY_FILE).read_text())['trials'] == 1


class TestHiddenLabels:

    def test_hidden_labels_never_reach_learner(self, tmp_path, monkeypatch):
        config = ExperimentConfig.load(_config(tmp_path, trials=1))
        data = load_experiment_data(config)
        masked, hidden = mask_labels(data.truth, config.label_fraction, config.seed)
        monkeypatch.setattr(experiment, "mask_labels", lambda *args: (masked, hidden))

        seen = []
        learner = experiment.run_learner

        def recording(dataset, params):
            graph, results = learner(dataset, params)
            seen.append(results[0].predictions)
            return graph, results

        monkeypatch.setattr(experiment, "run_learner", recording)
        clean = run_trial(config, data, 0)

        garbage = data.truth.copy()
        garbage[hidden] = 3 - garbage[hidden]
        tainted = run_trial(config, experiment.ExperimentData(data.views, garbage, data.class_names), 0)

        np.testing.assert_array_equal(seen[0], seen[1])
        assert clean.cp_off_diagonal_sum == tainted.cp_off_diagonal_sum
        assert clean.error_rate + tainted.error_rate == pytest.approx(1.0)


class TestCommandLine:

    def test_run(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(_config(tmp_path, trials=1))]) == cli.EXIT_OK
        assert json.loads(capsys.readouterr().out)['trials'] == 1
        assert (tmp_path / "results" / SUMMARY_FILE).exists()

    def test_run_out_override(self, tmp_path):
        out = tmp_path / "elsewhere"
        assert cli.main(["run", "--config", str(_config(tmp_path, trials=1)), "--out", str(out)]) == cli.EXIT_OK
        assert (out / TRIALS_FILE).exists()

    def test_config_error_exit_code(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({'data': 'x.csv', 'colour': 'blue'}))
        assert cli.main(["run", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_missing_data_exit_code(self, tmp_path):
        path = tmp_path / "missing.yaml"
        path.write_text(yaml.safe_dump({'data': 'absent.csv'}))
        assert cli.main(["run", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_numeric_error_exit_code(self, tmp_path, monkeypatch):
        def failing(*args, **kwargs):
            raise NumericalError("unlabeled system is singular")

        monkeypatch.setattr(cli, "run_experiment", failing)
        assert cli.main(["run", "--config", str(_config(tmp_path))]) == cli.EXIT_NUMERIC

    def test_embed(self, tmp_path, capsys):
        save_matrix(tmp_path / "W.csv", random_weight_graph(8, 0).W)
        out = tmp_path / "coords.csv"
        assert cli.main(["embed", "--weights", str(tmp_path / "W.csv"), "--dim", "2",
                         "--out", str(out)]) == cli.EXIT_OK
        coords = load_matrix(out)
        assert coords.shape == (8, 2)
        np.testing.assert_allclose(coords.T @ coords, np.eye(2), atol=1e-8)
        assert json.loads(capsys.readouterr().out)['cost'] >= 0

    def test_embed_bad_dimension(self, tmp_path):
        save_matrix(tmp_path / "W.csv", random_weight_graph(4, 0).W)
        assert cli.main(["embed", "--weights", str(tmp_path / "W.csv"), "--dim", "4",
                         "--out", str(tmp_path / "c.csv")]) == cli.EXIT_CONFIG

    def test_cp(self, tmp_path, capsys):
        save_matrix(tmp_path / "W.csv", [[0.0, 1.0], [1.0, 0.0]])
        (tmp_path / "labels.csv").write_text("1,2\n2,2\n")
        assert cli.main(["cp", "--weights", str(tmp_path / "W.csv"), "--labels",
                         str(tmp_path / "labels.csv")]) == cli.EXIT_OK
        report = json.loads(capsys.readouterr().out)
        # F = [[1,-1],[-1,-1]] and W² = I, so CP = FᵀF
        assert report['matrix'] == [[2.0, 0.0], [0.0, 2.0]]
        assert report['off_diagonal_sum'] == 0.0

    def test_cp_label_count_mismatch(self, tmp_path):
        save_matrix(tmp_path / "W.csv", [[0.0, 1.0], [1.0, 0.0]])
        (tmp_path / "labels.csv").write_text("1\n2\n1\n")
        assert cli.main(["cp", "--weights", str(tmp_path / "W.csv"), "--labels",
                         str(tmp_path / "labels.csv")]) == cli.EXIT_CONFIG

    @pytest.mark.parametrize("fixture", ["six-node", "random", "two-blobs"])
    def test_oracle(self, fixture, capsys):
        assert cli.main(["oracle", "--fixture", fixture]) == cli.EXIT_OK
        assert json.loads(capsys.readouterr().out)['passed'] is True

    def test_oracle_failure_exit_code(self, monkeypatch):
        monkeypatch.setitem(cli.ORACLE_FIXTURES, "six-node", lambda: {'deviation': 1.0})
        assert cli.main(["oracle", "--fixture", "six-node"]) == cli.EXIT_NUMERIC


UCI_DIR = os.environ.get("SSDR_UCI_DIR")


@pytest.mark.slow
@pytest.mark.skipif(not UCI_DIR, reason="SSDR_UCI_DIR not set")
class TestUciBenchmarks:
    """Two views by halves, 10% labeled, 50 trials, alpha picked by CP"""

    @pytest.mark.parametrize("name, low, high", [
        ("diabetes", 0.22, 0.33),
        ("liver", 0.35, 0.47),
    ])
    def test_mean_error_band(self, name, low, high):
        config = ExperimentConfig.load(Path(__file__).parent / "config" / f"{name}.yaml")
        config.data.path = [str(Path(UCI_DIR) / Path(p).name) for p in config.data.path]
        report, _ = run_experiment(config, workers=os.cpu_count() or 1,
                                   out_dir=Path(UCI_DIR) / "results" / name)
        assert low <= report.error_rate <= high
