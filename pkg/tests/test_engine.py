"""Tests for DerlEngine command orchestration."""

import pandas as pd
import pytest

from derl_core.config import load_run_config
from derl_core.engine import HISTORY_FILE, MODEL_FILE, DerlEngine, DerlEngineError
from derl_core.serialization import ConfigMismatchError

from tests.fixtures.configs import TINY_RUN_OVERRIDES


def _config(*extra):
    return load_run_config(overrides=[*TINY_RUN_OVERRIDES, "eval.rates=0.0,0.5", *extra])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny model trained once and shared by the evaluation tests."""
    home = tmp_path_factory.mktemp("engine")
    engine = DerlEngine(home=home)
    result = engine.train(_config(), "run")
    return engine, result


# ---------------------------------------------------------------------------
# TestFromEnv
# ---------------------------------------------------------------------------


class TestFromEnv:
    """Engine construction from environment variables."""

    def test_reads_home_and_workers(self, derl_home, monkeypatch):
        monkeypatch.setenv("DERL_WORKERS", "4")
        engine = DerlEngine.from_env()
        assert engine.home == derl_home
        assert engine.workers == 4

    def test_relative_paths_resolve_under_home(self, tmp_path):
        engine = DerlEngine(home=tmp_path)
        assert engine.resolve("a/b") == tmp_path / "a" / "b"
        assert engine.resolve(tmp_path / "abs") == tmp_path / "abs"
        assert engine.resolve(None) == tmp_path


# ---------------------------------------------------------------------------
# TestGenData
# ---------------------------------------------------------------------------


class TestGenData:
    """Synthetic dataset generation."""

    def test_writes_manifest_and_snapshot(self, tmp_path):
        engine = DerlEngine(home=tmp_path)
        manifest = engine.gen_data(_config(), "data")
        assert manifest == tmp_path / "data" / "manifest.txt"
        assert (tmp_path / "data" / "resolved_config.ini").exists()
        info = engine.dataset_info("data")
        assert (info["count_train"], info["count_valid"], info["count_test"]) == ("28", "4", "8")

    def test_planted_cosines_survive_the_manifest(self, tmp_path):
        engine = DerlEngine(home=tmp_path)
        manifest = engine.gen_data(_config("data.redundancy=1.0"), "data")
        cosines = engine.planted_cosines(manifest)
        assert set(cosines) == {"tv", "ta", "va"}
        assert all(v == pytest.approx(1.0, abs=1e-9) for v in cosines.values())

    def test_missing_dataset_path(self, tmp_path):
        engine = DerlEngine(home=tmp_path)
        with pytest.raises(DerlEngineError):
            engine.train(_config(f"data.path={tmp_path / 'nowhere'}"), "run")


# ---------------------------------------------------------------------------
# TestTrain
# ---------------------------------------------------------------------------


class TestTrain:
    """Training writes the model, history and resolved config."""

    def test_outputs(self, trained):
        engine, result = trained
        run_dir = engine.home / "run"
        assert result["model"] == str(run_dir / MODEL_FILE)
        assert result["history"] == str(run_dir / HISTORY_FILE)
        assert result["epochs"] == 3
        assert 0 <= result["best_epoch"] < 3
        history = pd.read_csv(run_dir / HISTORY_FILE)
        assert len(history) == 3
        assert (run_dir / "resolved_config.ini").exists()

    def test_step_callback(self, tmp_path):
        engine = DerlEngine(home=tmp_path)
        steps = []
        engine.train(_config("train.epochs=1"), "run", on_step=steps.append)
        assert [s.step for s in steps] == [0, 1, 2, 3]

    def test_resume_requires_matching_architecture(self, trained, tmp_path):
        engine, result = trained
        resumed = engine.train(_config("train.epochs=1"), tmp_path / "resumed", resume=result["model"])
        assert resumed["epochs"] == 1
        with pytest.raises(ConfigMismatchError):
            engine.train(_config("model.k_shared=1"), tmp_path / "bad", resume=result["model"])


# ---------------------------------------------------------------------------
# TestEvaluate
# ---------------------------------------------------------------------------


class TestEvaluate:
    """Intra and inter protocols against a saved model."""

    def test_intra(self, trained, tmp_path):
        engine, result = trained
        report = engine.evaluate(_config(), "intra", tmp_path / "eval", model_path=result["model"])
        assert [row["condition"] for row in report["rows"]] == ["r=0.0", "r=0.5", "avg"]
        files = report["files"]
        for key in ("report", "confusion", "summary", "rate_curve"):
            assert key in files
        # only r=0.5 is both evaluated and listed in eval.confusion_rates
        assert files["confusion_0"].endswith("confusion_r0p5.svg")

    def test_inter(self, trained, tmp_path):
        engine, result = trained
        report = engine.evaluate(_config(), "inter", tmp_path / "eval", model_path=result["model"])
        assert len(report["rows"]) == 8
        assert report["rows"][-1]["condition"] == "avg"
        assert "rate_curve" not in report["files"]

    def test_config_check(self, trained, tmp_path):
        engine, result = trained
        with pytest.raises(ConfigMismatchError):
            engine.evaluate(_config("model.k_shared=3"), "intra", tmp_path, model_path=result["model"],
                            check_config=True)

    def test_model_config_taken_from_file_by_default(self, trained, tmp_path):
        engine, result = trained
        report = engine.evaluate(_config("model.k_shared=3"), "intra", tmp_path, model_path=result["model"])
        assert len(report["rows"]) == 3

    def test_needs_model(self, tmp_path):
        with pytest.raises(DerlEngineError, match="--model"):
            DerlEngine(home=tmp_path).evaluate(_config(), "intra", "eval")

    def test_unknown_protocol(self, tmp_path):
        with pytest.raises(DerlEngineError):
            DerlEngine(home=tmp_path).evaluate(_config(), "cross", "eval")

    def test_missing_model_file(self, tmp_path):
        with pytest.raises(DerlEngineError):
            DerlEngine(home=tmp_path).evaluate(_config(), "inter", "eval", model_path=tmp_path / "none.bin")

    def test_ablation_writes_both_tables(self, tmp_path):
        engine = DerlEngine(home=tmp_path)
        report = engine.evaluate(_config("eval.variants=full,wo_mrf", "train.epochs=1"), "ablation", "abl")
        intra = pd.read_csv(report["files"]["ablation_intra"])
        inter = pd.read_csv(report["files"]["ablation_inter"])
        assert list(intra["variant"]) == ["full", "wo_mrf"]
        assert list(inter.columns) == ["variant", "t", "v", "a", "t+v", "t+a", "v+a", "t+v+a", "avg"]


# ---------------------------------------------------------------------------
# TestPlot
# ---------------------------------------------------------------------------


class TestPlot:
    """Re-rendering figures from CSVs."""

    def test_rerenders_intra_figures(self, trained, tmp_path):
        engine, result = trained
        engine.evaluate(_config(), "intra", tmp_path / "eval", model_path=result["model"])
        written = engine.plot(tmp_path / "eval", tmp_path / "figs")
        names = sorted(p.name for p in written)
        assert names == ["confusion_r0p0.svg", "confusion_r0p5.svg", "intra_rate_curve.svg"]

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DerlEngineError):
            DerlEngine(home=tmp_path).plot(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DerlEngineError):
            DerlEngine(home=tmp_path).plot("absent")


# ---------------------------------------------------------------------------
# TestCountParams
# ---------------------------------------------------------------------------


def test_count_params_matches_model(tmp_path):
    counts = DerlEngine(home=tmp_path).count_params(_config())
    assert sum(counts["by_module"].values()) == counts["total"]
    assert counts["total"] - counts["inference"] == counts["by_module"]["mlcr"]
