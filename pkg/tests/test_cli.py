import csv
import json

import pytest

from earlysd.cli import main

FAST_CONFIG = """\
seeds = [0]

[model]
hidden = 32
epochs = 40
patience = 15

[augment]
lp_epochs = 30
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["generate", "--seed", "0", "--out", str(data)]) == 0
    cfg = root / "fast.toml"
    cfg.write_text(FAST_CONFIG, encoding="utf-8")
    return data, cfg


class TestGenerate:
    def test_artifacts(self, dataset):
        data, _ = dataset
        for name in ("users.csv", "topics.csv", "ut_edges.csv",
                     "content.jsonl", "ground_truth.csv"):
            assert (data / name).exists(), name
        with open(data / "ground_truth.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 468

    def test_negative_seed_is_config_error(self, tmp_path):
        assert main(["generate", "--seed", "-1",
                     "--out", str(tmp_path / "x")]) == 2


class TestAnalyze:
    def test_report(self, dataset, tmp_path):
        data, _ = dataset
        out = tmp_path / "out"
        assert main(["analyze", str(data), "--out", str(out)]) == 0
        payload = json.loads((out / "analysis_report.json").read_text())
        assert payload["n_users"] == 468
        assert payload["group_sizes"] == {
            "non_sfva": 259, "sfva": 134, "potential_sfva": 75}
        assert (out / "analysis_report.md").exists()

    def test_missing_dataset_is_runtime_error(self, tmp_path):
        assert main(["analyze", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "out")]) == 3


class TestAugment:
    def test_refined_graph_saved(self, dataset, tmp_path):
        data, cfg = dataset
        out = tmp_path / "refined"
        assert main(["augment", str(data), "--config", str(cfg),
                     "--seed", "0", "--out", str(out)]) == 0
        summary = json.loads((out / "augment_summary.json").read_text())
        assert summary["n_users"] == 468
        assert summary["n_ut_edges"] >= 0
        assert (out / "uu_edges.csv").exists()
        assert 0.0 <= summary["lp_holdout_auc"] <= 1.0


class TestTrainEvaluate:
    def test_train_then_evaluate(self, dataset, tmp_path):
        data, cfg = dataset
        run = tmp_path / "run"
        assert main(["train", str(data), "--config", str(cfg),
                     "--seed", "0", "--out", str(run)]) == 0
        assert (run / "model.esd").exists()
        assert (run / "model.toml").exists()
        assert (run / "training_log.csv").exists()
        metrics = json.loads((run / "metrics.json").read_text())
        assert 0.0 <= metrics["metrics"]["acc"] <= 1.0

        ev = tmp_path / "eval"
        assert main(["evaluate", str(data), "--config", str(cfg),
                     "--seed", "0", "--model", str(run / "model.esd"),
                     "--out", str(ev)]) == 0
        evaluated = json.loads((ev / "metrics.json").read_text())
        assert 0.0 <= evaluated["metrics"]["acc"] <= 1.0

    def test_bad_config_key(self, dataset, tmp_path):
        data, _ = dataset
        bad = tmp_path / "bad.toml"
        bad.write_text("[model]\nwidth = 3\n", encoding="utf-8")
        assert main(["train", str(data), "--config", str(bad),
                     "--out", str(tmp_path / "out")]) == 2

    def test_bad_mask(self, dataset, tmp_path):
        data, cfg = dataset
        assert main(["train", str(data), "--config", str(cfg),
                     "--mask", "XYZ", "--out", str(tmp_path / "out")]) == 2


class TestReport:
    def test_no_artifacts_is_config_error(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "empty")]) == 2

    def test_assembles_from_metrics(self, dataset, tmp_path):
        data, cfg = dataset
        out = tmp_path / "out"
        assert main(["train", str(data), "--config", str(cfg),
                     "--seed", "0", "--out", str(out)]) == 0
        assert main(["analyze", str(data), "--out", str(out)]) == 0
        assert main(["report", "--out", str(out)]) == 0
        report = (out / "report.md").read_text()
        assert "Detector test metrics" in report
