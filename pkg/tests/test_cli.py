"""
Tests for configuration loading and the command-line entry points
"""
import json
import logging

import numpy as np
import pytest

from app.api.options import resolve_config
from app.core.config import load_config
from app.core.exceptions import ConfigError
from app.core.logging import setup_logging
from app.main import EXIT_CONFIG, EXIT_OK, EXIT_USAGE, dispatch
from app.models.session import TrainingMode, WeightMetric
from app.services.storage_service import StorageService
from tests.conftest import SMALL_ARCH


def desk_config(**overrides):
    config = {
        "synthetic": {"per_class": 20, "noise_level": 0.2, "shape": [16, 16], "speakers": 12},
        "arch": SMALL_ARCH,
        "split": {"ratios": [0.5, 0.25, 0.25]},
        "train": {"epochs": 1, "batch_size": 16, "lr": 0.005},
        "lime": {"n_samples": 24, "n_segments": 4, "slic_iters": 2},
        "sessions": {"n_sessions": 2},
        "out_dir": "out",
    }
    config.update(overrides)
    return config


@pytest.fixture
def config_file(tmp_path):
    def _write(config=None, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(config if config is not None else desk_config()), encoding="utf-8")
        return path
    return _write


class TestLoadConfig:

    def test_defaults(self, config_file):
        cfg = load_config(config_file({"synthetic": {}, "arch": "in:32x32x1;c3x4-p2-fc8-out3"}))
        assert cfg.train.lam == 1.0
        assert cfg.sessions.metric == WeightMetric.EUCLIDEAN
        assert cfg.sessions.mode == TrainingMode.WEIGHTED_EWC
        assert cfg.lime.n_segments == 32
        assert cfg.synthetic.classes == 3
        assert cfg.data_source == "synthetic"

    def test_lambda_key(self, config_file):
        cfg = load_config(config_file(desk_config(train={"lambda": 7.5})))
        assert cfg.train.lam == 7.5

    def test_relative_out_dir(self, config_file, tmp_path):
        assert load_config(config_file()).out_dir == tmp_path / "out"

    def test_two_sources_named(self, config_file, tmp_path):
        (tmp_path / "data.spc").write_bytes(b"SPC1")
        with pytest.raises(ConfigError, match="synthetic and cache"):
            load_config(config_file(desk_config(cache="data.spc")))

    def test_no_source(self, config_file):
        with pytest.raises(ConfigError, match="one data source required"):
            load_config(config_file({"arch": SMALL_ARCH}))

    def test_missing_arch(self, config_file):
        with pytest.raises(ConfigError, match="arch"):
            load_config(config_file({"synthetic": {}}))

    def test_bad_arch(self, config_file):
        with pytest.raises(ConfigError, match="arch"):
            load_config(config_file(desk_config(arch="in:4x4x1;p2-p2-p2-out2")))

    def test_unknown_key(self, config_file):
        with pytest.raises(ConfigError, match="train.momentum"):
            load_config(config_file(desk_config(train={"momentum": 0.9})))

    def test_negative_lambda(self, config_file):
        with pytest.raises(ConfigError, match="train.lambda"):
            load_config(config_file(desk_config(train={"lambda": -1})))

    def test_json_error_location(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "arch": ,\n}', encoding="utf-8")
        with pytest.raises(ConfigError, match="line 2, column 11"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.json")

    def test_missing_manifest_path(self, config_file):
        with pytest.raises(ConfigError, match="manifest"):
            load_config(config_file({"manifest": "nowhere.csv", "arch": SMALL_ARCH}))

    def test_class_names_must_match_arch(self, config_file):
        with pytest.raises(ConfigError, match="class_names"):
            load_config(config_file(desk_config(class_names=["yes", "no"])))


class TestOverrides:

    def test_flags_win(self, config_file, tmp_path):
        cfg = resolve_config(
            config_file(), out_dir=tmp_path / "elsewhere", seed=9, lam=5.0, metric="cosine", mode="weighted",
            sessions=1,
        )
        assert cfg.out_dir == tmp_path / "elsewhere"
        assert cfg.seed == 9
        assert cfg.train.lam == 5.0
        assert cfg.sessions.metric == WeightMetric.COSINE
        assert cfg.sessions.mode == TrainingMode.WEIGHTED
        assert cfg.sessions.n_sessions == 1

    def test_no_flags_keep_file_values(self, config_file):
        cfg = resolve_config(config_file())
        assert cfg.sessions.n_sessions == 2
        assert cfg.seed == 0


class TestDispatch:

    def test_help(self, capsys):
        assert dispatch(["eval", "--help"]) == EXIT_OK
        assert "--checkpoint" in capsys.readouterr().out

    def test_group_help(self, capsys):
        assert dispatch(["--help"]) == EXIT_OK
        out = capsys.readouterr().out
        for command in ("prepare-data", "gen-synthetic", "train-initial", "eval", "explain",
                        "run-incremental", "sweep-lambda", "compare-modes", "compare-metrics"):
            assert command in out

    def test_unknown_flag(self, config_file, capsys):
        assert dispatch(["run-incremental", "--config", str(config_file()), "--bogus"]) == EXIT_USAGE
        assert "error: " in capsys.readouterr().err

    def test_negative_lambda_flag(self, config_file):
        assert dispatch(["run-incremental", "--config", str(config_file()), "--lambda", "-1"]) == EXIT_USAGE

    def test_unknown_command(self):
        assert dispatch(["fly"]) == EXIT_USAGE

    def test_bad_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{", encoding="utf-8")
        assert dispatch(["train-initial", "--config", str(path)]) == EXIT_CONFIG
        assert "error: ConfigError:" in capsys.readouterr().err

    def test_missing_checkpoint_is_a_failure(self, config_file):
        assert dispatch(["eval", "--config", str(config_file())]) == 1

    def test_unexpected_exception_is_a_failure(self, tmp_path, monkeypatch, capsys):
        def broken(items, path):
            raise KeyError("boom")

        monkeypatch.setattr(StorageService, "cache_write", broken)
        args = ["gen-synthetic", "--out", str(tmp_path / "c.spc"), "--per-class", "2", "--size", "8", "8"]
        assert dispatch(args) == 1
        assert capsys.readouterr().err.strip().splitlines()[-1] == "error: KeyError: 'boom'"

    def test_oversized_speaker_id_is_a_failure(self, write_wav, tmp_path, capsys):
        write_wav("a.wav", (np.arange(400) % 50) * 100)
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(f"a.wav,yes,{'x' * 70000}\n", encoding="utf-8")
        cache = tmp_path / "speech.spc"
        assert dispatch(["prepare-data", "--manifest", str(manifest), "--out", str(cache)]) == 1
        assert "error: ValueError: speaker id" in capsys.readouterr().err
        assert not cache.exists()


class TestCommands:

    def test_train_eval_explain(self, config_file, tmp_path):
        path = str(config_file())
        out = tmp_path / "out"

        assert dispatch(["train-initial", "--config", path]) == EXIT_OK
        assert (out / "history.csv").read_text().startswith("epoch,train_loss,val_accuracy\n")
        assert (out / "checkpoints" / "session_00.lewc").exists()

        assert dispatch(["eval", "--config", path, "--split", "validation"]) == EXIT_OK
        lines = (out / "confusion.csv").read_text().splitlines()
        assert lines[0] == "class_0,class_1,class_2,class_3"
        assert len(lines) == 5

        assert dispatch(["explain", "--config", path, "--index", "2", "--class", "1", "--top-k", "2"]) == EXIT_OK
        names = sorted(p.name for p in (out / "explanations").iterdir())
        assert names == ["test_0002_class1.csv", "test_0002_class1_segments.pgm", "test_0002_class1_top2.pgm"]

        assert dispatch(["explain", "--config", path, "--index", "9999"]) == EXIT_USAGE

    def test_run_incremental_reruns_identical(self, config_file, tmp_path):
        path = str(config_file())
        for name in ("a", "b"):
            assert dispatch(["run-incremental", "--config", path, "--out-dir", str(tmp_path / name)]) == EXIT_OK
        first = (tmp_path / "a" / "sessions.csv").read_bytes()
        assert first == (tmp_path / "b" / "sessions.csv").read_bytes()
        assert len(first.decode().splitlines()) == 1 + 3

    def test_run_incremental_resume_from(self, config_file, tmp_path):
        path = str(config_file())
        full, resumed = tmp_path / "full", tmp_path / "resumed"
        assert dispatch(["run-incremental", "--config", path, "--out-dir", str(full)]) == EXIT_OK

        (resumed / "checkpoints").mkdir(parents=True)
        for name in ("session_00.lewc", "session_01.lewc"):
            (resumed / "checkpoints" / name).write_bytes((full / "checkpoints" / name).read_bytes())
        args = ["run-incremental", "--config", path, "--out-dir", str(resumed), "--resume-from", "1"]
        assert dispatch(args) == EXIT_OK

        assert (resumed / "sessions.csv").read_bytes() == (full / "sessions.csv").read_bytes()
        assert (resumed / "checkpoints" / "session_02.lewc").read_bytes() == (
            full / "checkpoints" / "session_02.lewc"
        ).read_bytes()

    def test_resume_past_last_session(self, config_file, tmp_path, capsys):
        path = str(config_file())
        assert dispatch(["run-incremental", "--config", path, "--resume-from", "5"]) == 1
        assert "error: ValueError: resume_from must be in 0..2" in capsys.readouterr().err

    def test_sweep_lambda(self, config_file, tmp_path):
        path = str(config_file())
        assert dispatch(["sweep-lambda", "--config", path, "--sessions", "1", "--lambdas", "0,100"]) == EXIT_OK
        lines = (tmp_path / "out" / "lambda_sweep.csv").read_text().splitlines()
        assert lines[0] == "lambda,session,test_accuracy"
        assert [line.split(",")[:2] for line in lines[1:]] == [["0", "0"], ["0", "1"], ["100", "0"], ["100", "1"]]

    def test_sweep_lambda_rejects_bad_list(self, config_file):
        assert dispatch(["sweep-lambda", "--config", str(config_file()), "--lambdas", "1,x"]) == EXIT_USAGE

    def test_compare_modes(self, config_file, tmp_path, capsys):
        path = str(config_file())
        code = dispatch([
            "compare-modes", "--config", path, "--sessions", "1", "--seeds", "2",
            "--modes", "traditional", "--modes", "weighted",
        ])
        assert code == EXIT_OK
        lines = (tmp_path / "out" / "compare_modes.csv").read_text().splitlines()
        assert len(lines) == 1 + 4
        assert "traditional session=0" in capsys.readouterr().out

    def test_compare_metrics(self, config_file, tmp_path):
        path = str(config_file())
        assert dispatch([
            "compare-metrics", "--config", path, "--sessions", "1", "--seeds", "1", "--metrics", "cosine",
        ]) == EXIT_OK
        lines = (tmp_path / "out" / "compare_metrics.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].startswith("cosine,")

    def test_gen_synthetic_then_cache_source(self, config_file, tmp_path):
        cache = tmp_path / "corpus.spc"
        assert dispatch([
            "gen-synthetic", "--out", str(cache), "--classes", "4", "--per-class", "10", "--size", "16", "16",
            "--speakers", "12", "--seed", "3",
        ]) == EXIT_OK
        items = StorageService.cache_read(cache)
        assert len(items) == 40 and items[0].shape == (16, 16)

        cfg = load_config(config_file({"cache": "corpus.spc", "arch": SMALL_ARCH}, name="cached.json"))
        assert cfg.data_source == "cache"

    def test_prepare_data(self, write_wav, tmp_path):
        for i, label in enumerate(["yes", "no", "yes"]):
            write_wav(f"spk{i}_nohash_0.wav", (np.arange(400) % 50) * 100)
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(
            "path,label,speaker_id\n"
            "spk0_nohash_0.wav,yes,\n"
            "spk1_nohash_0.wav,no,\n"
            "spk2_nohash_0.wav,yes,alice\n",
            encoding="utf-8",
        )
        cache = tmp_path / "speech.spc"
        assert dispatch(["prepare-data", "--manifest", str(manifest), "--out", str(cache)]) == EXIT_OK

        items = StorageService.cache_read(cache)
        assert [(i.label, i.speaker_id) for i in items] == [(1, "spk0"), (0, "spk1"), (1, "alice")]
        assert items[0].shape == (128, 128)
        assert (tmp_path / "speech.labels.csv").read_text() == "index,name\n0,no\n1,yes\n"


class TestLogging:

    def test_setup_is_idempotent(self, tmp_path):
        root = setup_logging(tmp_path / "logs" / "run.log", "debug")
        setup_logging(tmp_path / "logs" / "run.log", "debug")
        ours = [h for h in root.handlers if getattr(h, "_explainil", False)]
        assert len(ours) == 2
        assert root.level == logging.DEBUG

        logging.getLogger("app.test").info("hello")
        for handler in ours:
            handler.flush()
        assert "app.test - INFO - hello" in (tmp_path / "logs" / "run.log").read_text()
        setup_logging(None, "WARNING")
