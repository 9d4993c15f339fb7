"""End-to-end subcommands through app.main on tiny inputs."""

import logging
import shutil

import torch
import pandas as pd
import pytest

from app import main
from conftest import tiny_config
from services import trainer
from services.hsi_data import load_cube
from services.run_manifest import read_manifest
from services.train_config import save_config


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    save_config(tiny_config(), path)
    return path


@pytest.fixture(scope="module")
def trained_run(tiny_cfg, tmp_path_factory):
    run = tmp_path_factory.mktemp("runs") / "tiny"
    assert main(["train", "--config", str(tiny_cfg), "--out", str(run)]) == 0
    return run


class TestSynthDegrade:

    def test_synth_writes_cube(self, tmp_path):
        out = tmp_path / "scene"
        assert main(["synth", "--width", "32", "--height", "24", "--bands", "4", "--seed", "3", "--out", str(out)]) == 0
        cube = load_cube(out)
        assert cube.data.shape == (4, 24, 32)
        assert (tmp_path / "scene.manifest.cfg").exists()

    def test_synth_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--width", "16", "--height", "16", "--bands", "4", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.raw").read_bytes() == (tmp_path / "b.raw").read_bytes()

    def test_synth_needs_out(self):
        assert main(["synth"]) == 2

    def test_degrade(self, tmp_path):
        main(["synth", "--width", "32", "--height", "32", "--bands", "4", "--out", str(tmp_path / "hr")])
        for name in ("lr1", "lr2"):
            args = ["degrade", "--in", str(tmp_path / "hr"), "--scale", "4", "--snr", "40", "--seed", "5",
                    "--out", str(tmp_path / name)]
            assert main(args) == 0
        assert load_cube(tmp_path / "lr1").data.shape == (4, 8, 8)
        assert (tmp_path / "lr1.raw").read_bytes() == (tmp_path / "lr2.raw").read_bytes()
        m = read_manifest(tmp_path / "lr1.manifest.cfg")
        assert m["extra"]["scale"] == "4" and m["seeds"]["noise"] == "5"

    def test_degrade_bad_scale(self, tmp_path):
        assert main(["degrade", "--in", str(tmp_path / "hr"), "--scale", "3", "--out", str(tmp_path / "lr")]) == 2

    def test_degrade_bad_snr(self, tmp_path):
        assert main(["degrade", "--in", "x", "--scale", "2", "--snr", "-5", "--out", str(tmp_path / "lr")]) == 2

    def test_degrade_missing_input(self, tmp_path):
        assert main(["degrade", "--in", str(tmp_path / "none"), "--scale", "2", "--out", str(tmp_path / "lr")]) == 2


class TestTrain:

    def test_run_layout(self, trained_run):
        curves = pd.read_csv(trained_run / "curves.csv")
        assert len(curves) == tiny_config().joint_iters
        for name in ("config.cfg", "ckpt-4", "diag/summary.txt", "diag/density.csv", "manifest.cfg"):
            assert (trained_run / name).exists(), name
        m = read_manifest(trained_run / "manifest.cfg")
        assert m["run"]["command"].startswith("hsisr train")
        assert m["extra"]["loss_variant"] == "ssrp"

    def test_ablation_and_loss_recorded(self, tiny_cfg, tmp_path):
        run = tmp_path / "abl"
        assert main(["train", "--config", str(tiny_cfg), "--ablation", "3", "--loss", "js",
                     "--joint-iters", "2", "--out", str(run)]) == 0
        extra = read_manifest(run / "manifest.cfg")["extra"]
        assert extra["ablation_model"] == "3" and extra["loss_variant"] == "js"
        assert extra["switch.critic_sigmoid"] == "False" and extra["switch.use_encoder"] == "False"
        assert len(pd.read_csv(run / "curves.csv")) == 2

    def test_generator_conv_overrides_ablation(self, tiny_cfg, tmp_path):
        run = tmp_path / "conv2d"
        assert main(["train", "--config", str(tiny_cfg), "--ablation", "2", "--generator-conv", "2d",
                     "--joint-iters", "2", "--out", str(run)]) == 0
        extra = read_manifest(run / "manifest.cfg")["extra"]
        assert extra["ablation_model"] == "2" and extra["switch.generator_conv"] == "2d"
        assert "conv_mode = 2d" in (run / "config.cfg").read_text()

    def test_resume_warns_about_dropped_flags(self, tiny_cfg, tmp_path, caplog):
        run = tmp_path / "resumed"
        assert main(["train", "--config", str(tiny_cfg), "--checkpoint-period", "2", "--out", str(run)]) == 0
        shutil.rmtree(run / "ckpt-4")

        with caplog.at_level(logging.WARNING, logger="hsisr"):
            assert main(["train", "--resume", "--seed", "5", "--loss", "js", "--out", str(run)]) == 0
        warnings = [r.getMessage() for r in caplog.records if r.levelno == logging.WARNING]
        assert any("--seed" in w and "--loss" in w for w in warnings)
        assert len(pd.read_csv(run / "curves.csv")) == tiny_config().joint_iters
        assert read_manifest(run / "manifest.cfg")["extra"]["loss_variant"] == "ssrp"

    def test_plain_resume_is_quiet(self, tiny_cfg, tmp_path, caplog):
        run = tmp_path / "quiet"
        assert main(["train", "--config", str(tiny_cfg), "--checkpoint-period", "2", "--out", str(run)]) == 0
        shutil.rmtree(run / "ckpt-4")

        with caplog.at_level(logging.WARNING, logger="hsisr"):
            assert main(["train", "--resume", "--out", str(run)]) == 0
        assert not any("--resume" in r.getMessage() for r in caplog.records)

    def test_scale_conflicts_with_config(self, tiny_cfg, tmp_path):
        assert main(["train", "--config", str(tiny_cfg), "--scale", "4", "--out", str(tmp_path / "r")]) == 2

    def test_divergence_exit_code(self, tiny_cfg, tmp_path, monkeypatch):
        monkeypatch.setattr(
            trainer, "spectral_contextual_loss",
            lambda *a, **kw: torch.tensor(float("nan"), requires_grad=True),
        )
        run = tmp_path / "nan"
        assert main(["train", "--config", str(tiny_cfg), "--out", str(run)]) == 3
        assert read_manifest(run / "manifest.cfg")["extra"]["diverged_at"] == "1"


class TestEval:

    def test_checkpoint_eval(self, trained_run, capsys):
        assert main(["eval", "--run", str(trained_run), "--baseline", "bicubic", "--no-niqe"]) == 0
        out = trained_run / "eval"
        assert (out / "report-legan.txt").exists() and (out / "report-bicubic.txt").exists()
        assert list(pd.read_csv(out / "metrics.csv")["method"]) == ["legan", "bicubic"]
        assert "method = legan" in capsys.readouterr().out

    def test_oracle_identity(self, tiny_cfg, tmp_path, capsys):
        assert main(["eval", "--config", str(tiny_cfg), "--oracle-identity", "--out", str(tmp_path)]) == 0
        text = capsys.readouterr().out
        assert "psnr = inf" in text and "sre = 0.0" in text
        assert (tmp_path / "manifest.cfg").exists()

    def test_nothing_to_evaluate(self, tiny_cfg, tmp_path):
        assert main(["eval", "--config", str(tiny_cfg), "--out", str(tmp_path)]) == 2


class TestDiagnoseAblateRuns:

    def test_diagnose(self, trained_run, tmp_path, capsys):
        assert main(["diagnose", "--run", str(trained_run), "--out", str(tmp_path)]) == 0
        for name in ("is.png", "fid.png", "total.png", "density.png", "mode_spectrum.png", "stability.csv"):
            assert (tmp_path / name).exists(), name
        assert "overlap = " in capsys.readouterr().out

    def test_diagnose_without_curves(self, tmp_path):
        assert main(["diagnose", "--run", str(tmp_path)]) == 2

    def test_ablate(self, tiny_cfg, tmp_path):
        assert main(["ablate", "--config", str(tiny_cfg), "--models", "3", "5", "--joint-iters", "2",
                     "--out", str(tmp_path)]) == 0
        table = pd.read_csv(tmp_path / "ablation.csv")
        assert list(table["model"]) == ["model_3", "model_5", "bicubic"]
        assert (tmp_path / "model-5" / "curves.csv").exists()

    def test_runs_lists_registry(self, trained_run, capsys):
        assert main(["runs", "--limit", "5"]) == 0
        assert "train" in capsys.readouterr().out

    def test_version(self):
        assert main(["--version"]) == 0
