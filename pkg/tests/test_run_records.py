"""manifest.cfg and the local run registry."""

import asyncio
import math

import pytest

from database.init_db import create_database
from database.models import RunStatus
from services import run_registry
from services.run_manifest import RunManifest, read_manifest
from services.run_registry import finish_run, list_runs, record_metrics, register_run
from services.sr_metrics import MetricReport


class TestManifest:

    def test_write_and_read(self, tmp_path):
        artifact = tmp_path / "curves.csv"
        artifact.write_text("iter\n")
        m = RunManifest(command=["hsisr", "train", "--out", "run dir"], seeds={"config": 7})
        m.add(artifact, artifact)
        m.extra = {"loss_variant": "js"}
        m.write(tmp_path / "manifest.cfg")

        back = read_manifest(tmp_path / "manifest.cfg")
        assert back["run"]["command"] == "hsisr train --out 'run dir'"
        assert back["seeds"]["config"] == "7"
        assert list(back["artifacts"].values()) == [str(artifact)]
        assert back["extra"]["loss_variant"] == "js"
        assert float(back["run"]["wall_clock_s"]) >= 0.0

    def test_missing_artifact(self, tmp_path):
        m = RunManifest(command=["hsisr"])
        m.add(tmp_path / "nope.csv")
        with pytest.raises(FileNotFoundError):
            m.write(tmp_path / "manifest.cfg")
        assert not (tmp_path / "manifest.cfg").exists()

    def test_read_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_manifest(tmp_path / "manifest.cfg")


class TestRegistry:

    def test_lifecycle(self, tmp_path):
        run_id = register_run("eval", str(tmp_path), ["eval", "--oracle-identity"], seed=3)
        assert isinstance(run_id, int)

        report = MetricReport(psnr=math.inf, ssim=1.0, pi=math.nan, sam=0.0, sre=0.0, n_cubes=2)
        record_metrics(run_id, {"oracle_identity": report, "bicubic": report})
        finish_run(run_id, RunStatus.FINISHED)

        row = next(r for r in list_runs(limit=1000) if r.id == run_id)
        assert row.command == "eval" and row.seed == 3
        assert row.status == "finished" and row.finished_at is not None
        assert row.n_metrics == 2

    def test_newest_first(self, tmp_path):
        a = register_run("synth", str(tmp_path), ["synth"])
        b = register_run("synth", str(tmp_path), ["synth"])
        ids = [r.id for r in list_runs(limit=2)]
        assert ids == [b, a]

    def test_disabled(self, monkeypatch, tmp_path):
        monkeypatch.setattr(run_registry, "REGISTRY_ENABLED", False)
        assert register_run("synth", str(tmp_path), ["synth"]) is None
        # без id остальные вызовы ничего не делают
        finish_run(None, RunStatus.FAILED)
        record_metrics(None, {})

    def test_create_database_script(self, capsys):
        asyncio.run(create_database())
        assert "run registry is ready" in capsys.readouterr().out
