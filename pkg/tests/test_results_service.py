"""Tests for result files, manifests and model storage."""
import json

import numpy as np
import pytest

from src.models.cokriging import mf_predict_mean
from src.models.kriging import predict_mean
from src.services.experiment_service import (
    RECORD_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    ExperimentResult,
    ReplicateResult,
    experiment_service,
)
from src.services.results_service import ResultsService, file_hash
from src.utils.exceptions import ArgumentError, ConfigError, ResultsIOError


@pytest.fixture
def service(tmp_path):
    return ResultsService(tmp_path)


@pytest.fixture
def config():
    return ExperimentConfig(problem="ackley", criterion="maxvar", budget=2, replicates=1,
                            grid_points=200, n_test=100, n_jobs=1)


class TestExperimentFiles:
    def test_all_failed_gives_header_only(self, service, tmp_path, config):
        result = ExperimentResult(config, [ReplicateResult(0, 1, failure="BudgetError: none")])
        files = service.save_experiment(result, tmp_path / "run")
        assert files["records.csv"].read_text() == ",".join(RECORD_COLUMNS) + "\n"
        assert files["summary.csv"].read_text() == ",".join(SUMMARY_COLUMNS) + "\n"
        manifest = service.read_manifest(files["manifest.json"])
        assert manifest["completed"] == 0
        assert manifest["failures"] == [{"replicate": 0, "reason": "BudgetError: none"}]

    def test_manifest_hashes_match_files(self, service, tmp_path, config):
        result = experiment_service.run(config)
        files = service.save_experiment(result, tmp_path / "run")
        manifest = service.read_manifest(files["manifest.json"])
        assert manifest["files"]["records.csv"] == file_hash(files["records.csv"])
        assert manifest["config"]["problem"] == "ackley"
        assert "numpy" in manifest["versions"]
        assert service.compare_hashes(manifest, tmp_path / "run") == {"records.csv": True, "summary.csv": True}

    def test_identical_runs_give_identical_bytes(self, service, tmp_path, config):
        first = service.save_experiment(experiment_service.run(config), tmp_path / "a")
        second = service.save_experiment(experiment_service.run(config), tmp_path / "b")
        assert file_hash(first["records.csv"]) == file_hash(second["records.csv"])
        assert file_hash(first["summary.csv"]) == file_hash(second["summary.csv"])

    def test_changed_file_detected(self, service, tmp_path, config):
        result = ExperimentResult(config, [ReplicateResult(0, 1, failure="x")])
        files = service.save_experiment(result, tmp_path / "run")
        manifest = service.read_manifest(files["manifest.json"])
        files["summary.csv"].write_text("tampered\n")
        assert service.compare_hashes(manifest, tmp_path / "run")["summary.csv"] is False

    def test_unwritable_target(self, service, tmp_path, config):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        result = ExperimentResult(config, [])
        with pytest.raises(ResultsIOError) as info:
            service.save_experiment(result, blocker / "run")
        assert info.value.path is not None


class TestManifestErrors:
    def test_missing(self, service, tmp_path):
        with pytest.raises(ConfigError):
            service.read_manifest(tmp_path / "nothing.json")

    def test_wrong_version(self, service, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"format_version": 99, "config": {}}))
        with pytest.raises(ConfigError):
            service.read_manifest(path)


class TestModels:
    def test_kriging_round_trip(self, service, tmp_path, make_kriging):
        model = make_kriging(n=8, d=2, seed=3)
        loaded = service.load_model(service.save_model(model, tmp_path / "models" / "k.json"))
        x = np.array([0.4, 0.7])
        assert predict_mean(loaded, x) == pytest.approx(predict_mean(model, x), rel=1e-12)

    def test_cokriging_round_trip(self, service, tmp_path, two_level_model):
        loaded = service.load_model(service.save_model(two_level_model, tmp_path / "ck.json"))
        x = np.array([0.4, 0.7])
        assert mf_predict_mean(loaded, x) == pytest.approx(mf_predict_mean(two_level_model, x), rel=1e-10)

    def test_rejects_other_objects(self, service, tmp_path):
        with pytest.raises(ArgumentError):
            service.save_model({"kind": "kriging"}, tmp_path / "x.json")

    def test_unreadable_model(self, service, tmp_path):
        with pytest.raises(ResultsIOError):
            service.load_model(tmp_path / "missing.json")
