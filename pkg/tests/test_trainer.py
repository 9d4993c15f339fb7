"""Two-phase training, checkpoints and ablation plumbing on a tiny configuration."""

import math

import pandas as pd
import pytest
import torch

from conftest import tiny_config
from services import trainer
from services.tensor_archive import CheckpointError
from services.train_config import ConfigError, ablation_switches, preset_config
from services.trainer import (
    CURVE_COLUMNS,
    TrainingDivergedError,
    build_training_set,
    configure_for_ablation,
    critic_step,
    curves_to_frame,
    diversity_scores,
    effective_weights,
    generator_step,
    grid_search,
    init_state,
    joint_train,
    latest_checkpoint,
    prepare_data,
    pretrain,
    read_curves,
    restore_checkpoint,
    restore_network,
    save_checkpoint,
    train,
    write_curves,
)
from services.legan_models import init_weights


def _data(config):
    return prepare_data(build_training_set(config), config.scale)


def _snapshot(weights):
    return {k: v.clone() for k, v in weights.tensors.items()}


def _same(a, b):
    return set(a) == set(b) and all(torch.equal(a[k], b[k]) for k in a)


@pytest.fixture
def tiny_data(tiny):
    return _data(tiny)


class TestData:

    def test_split_sizes(self, tiny, tiny_data):
        # 2 сцены 32x32, патчи 16 с шагом 16 -> 8 пар, 70% -> 5 / 3
        assert tiny_data.n_train == 5 and tiny_data.n_test == 3
        assert tiny_data.train_lr.shape == (5, 4, 8, 8)
        assert tiny_data.train_lr_up.shape == tiny_data.train_hr.shape == (5, 4, 16, 16)

    def test_same_seed_same_data(self, tiny, tiny_data):
        again = _data(tiny)
        assert torch.equal(again.train_hr, tiny_data.train_hr)


class TestPretrain:

    def test_zero_iterations_is_noop(self, tiny_data):
        state = init_state(tiny_config(pretrain_iters=0))
        before = _snapshot(state.critic)
        pretrain(state, tiny_data)
        assert _same(before, _snapshot(state.critic))
        assert state.pretrained_iters == 0

    def test_updates_critic_and_encoder(self, tiny, tiny_data):
        state = init_state(tiny)
        d0, e0 = _snapshot(state.critic), _snapshot(state.encoder)
        pretrain(state, tiny_data)
        assert not _same(d0, _snapshot(state.critic))
        assert not _same(e0, _snapshot(state.encoder))
        assert state.pretrained_iters == tiny.pretrain_iters


class TestSteps:

    def test_critic_step_leaves_generator(self, tiny, tiny_data):
        state = init_state(tiny)
        g0, e0, d0 = _snapshot(state.generator), _snapshot(state.encoder), _snapshot(state.critic)
        critic_step(state, tiny_data.train_lr[:2], tiny_data.train_hr[:2], 1)
        assert _same(g0, _snapshot(state.generator))
        assert _same(e0, _snapshot(state.encoder))
        assert not _same(d0, _snapshot(state.critic))

    def test_generator_step_leaves_critic(self, tiny, tiny_data):
        state = init_state(tiny)
        g0, d0 = _snapshot(state.generator), _snapshot(state.critic)
        b = generator_step(state, tiny_data.train_lr[:2], tiny_data.train_hr[:2], tiny_data.train_lr_up[:2], 1)
        assert _same(d0, _snapshot(state.critic))
        assert not _same(g0, _snapshot(state.generator))
        assert math.isfinite(b.total)

    def test_divergence_guard(self, tiny, tiny_data, monkeypatch):
        monkeypatch.setattr(
            trainer, "spectral_contextual_loss",
            lambda *a, **kw: torch.tensor(float("nan"), requires_grad=True),
        )
        state = init_state(tiny)
        with pytest.raises(TrainingDivergedError) as err:
            generator_step(state, tiny_data.train_lr[:2], tiny_data.train_hr[:2], tiny_data.train_lr_up[:2], 7)
        assert err.value.iteration == 7


class TestJointTraining:

    def test_curves(self, tiny, tiny_data):
        state = train(tiny, tiny_data)
        frame = state.curves_frame()
        assert list(frame.columns) == list(CURVE_COLUMNS)
        assert list(frame["iter"]) == [1, 2, 3, 4]
        assert frame.loc[frame["iter"] % 2 == 1, "is"].isna().all()
        assert frame.loc[frame["iter"] % 2 == 0, "is"].notna().all()

    def test_total_decomposes(self, tiny, tiny_data):
        state = train(tiny, tiny_data)
        w = effective_weights(tiny)
        for r in state.curves:
            rebuilt = (w.lambda_spectral * r.spectral + w.eta_spatial * r.spatial
                       + w.sigma_adversarial * r.adversarial + w.mu_latent * r.latent + w.nu_content * r.content)
            assert r.total == pytest.approx(rebuilt, rel=1e-9, abs=1e-12)

    def test_deterministic(self, tiny, tiny_data):
        a = train(tiny, tiny_data)
        b = train(tiny, tiny_data)
        pd.testing.assert_frame_equal(a.curves_frame(), b.curves_frame())
        assert _same(_snapshot(a.generator), _snapshot(b.generator))

    @pytest.mark.parametrize("variant", ["js", "wasserstein_plain"])
    def test_loss_variants_run(self, tiny_data, variant):
        state = train(tiny_config(loss_variant=variant), tiny_data)
        assert all(math.isfinite(r.total) for r in state.curves)
        assert effective_weights(state.config).mu_latent == 0.0

    def test_gradient_penalty_runs(self, tiny_data):
        state = train(tiny_config(gradient_penalty=True), tiny_data)
        assert all(math.isfinite(r.critic) for r in state.curves)

    def test_on_row_callback(self, tiny, tiny_data):
        seen = []
        state = init_state(tiny)
        joint_train(state, tiny_data, until=3, on_row=seen.append)
        assert [r.iter for r in seen] == [1, 2, 3] and state.iter == 3

    def test_diversity_report(self, tiny, tiny_data):
        state = train(tiny, tiny_data)
        div = diversity_scores(state, tiny_data)
        assert div.n_samples == tiny_data.n_test
        assert div.feature_layer == "critic_last_maxpool"
        assert div.is_score >= 1.0 - 1e-9 and div.fid >= 0.0
        last = state.curves[-1]
        assert (last.is_score, last.fid) == (div.is_score, div.fid)

    def test_literal_mode_with_wider_critic(self, tiny_data):
        # base_channels 8 при 4 каналах куба: D_mu расширяется до числа каналов
        config = preset_config(
            "desk", 2,
            train={"pretrain_iters": 1, "joint_iters": 2, "batch_size": 2, "eval_period": 2,
                   "spectral_mode": "literal"},
            data={"bands": 4, "hr_patch": 16, "stride": 16, "scene_size": 32, "n_scenes": 2},
            generator={"n_resblocks": 1, "feature_width": 4},
            discriminator={"n_maxpool_blocks": 2, "base_channels": 8, "dense_width": 8},
            encoder={"latent_dim": 8, "dense_width": 8},
        )
        state = train(config, tiny_data)
        assert state.critic.module.head.out_channels == 4
        assert len(state.curves) == 2
        assert all(math.isfinite(r.spectral) and math.isfinite(r.total) for r in state.curves)


class TestCheckpoints:

    def test_bit_exact_round_trip(self, tiny, tiny_data, tmp_path):
        state = train(tiny, tiny_data)
        save_checkpoint(state, tmp_path / "ckpt")
        back = restore_checkpoint(tmp_path / "ckpt")
        assert back.config == tiny and back.iter == state.iter
        for net in ("generator", "critic", "encoder"):
            assert _same(_snapshot(getattr(state, net)), _snapshot(getattr(back, net)))
        assert torch.equal(back.rng.get_state(), state.rng.get_state())
        pd.testing.assert_frame_equal(back.curves_frame(), state.curves_frame())

    def test_resume_matches_uninterrupted(self, tiny_data, tmp_path):
        config = tiny_config(checkpoint_period=2)
        full = train(config, tiny_data, run_dir=tmp_path)
        assert (tmp_path / "ckpt-2").is_dir() and (tmp_path / "curves.csv").exists()

        resumed = restore_checkpoint(tmp_path / "ckpt-2")
        joint_train(resumed, tiny_data)
        assert resumed.iter == full.iter == 4
        assert _same(_snapshot(full.generator), _snapshot(resumed.generator))
        assert _same(_snapshot(full.critic), _snapshot(resumed.critic))
        pd.testing.assert_frame_equal(full.curves_frame(), resumed.curves_frame())

    def test_latest(self, tmp_path):
        for n in (4, 10, 2):
            (tmp_path / f"ckpt-{n}").mkdir()
        assert latest_checkpoint(tmp_path).name == "ckpt-10"
        with pytest.raises(CheckpointError):
            latest_checkpoint(tmp_path / "none")

    def test_architecture_mismatch(self, tiny, tiny_data, tmp_path):
        state = init_state(tiny)
        save_checkpoint(state, tmp_path / "c")
        other = tiny.generator.model_copy(update={"feature_width": 8})
        with pytest.raises(CheckpointError, match="architecture"):
            restore_network(tmp_path / "c" / "generator", init_weights(other, 0))
        with pytest.raises(CheckpointError):
            restore_network(tmp_path / "c" / "generator", state.critic)
        with pytest.raises(CheckpointError):
            restore_checkpoint(tmp_path / "c", tiny_config(joint_iters=6))

    def test_missing_config(self, tmp_path):
        with pytest.raises(CheckpointError):
            restore_checkpoint(tmp_path)


class TestCurvesFile:

    def test_csv_round_trip(self, tiny, tiny_data, tmp_path):
        state = train(tiny, tiny_data)
        write_curves(state.curves, tmp_path / "curves.csv")
        back = read_curves(tmp_path / "curves.csv")
        pd.testing.assert_frame_equal(curves_to_frame(back), state.curves_frame())

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_curves(tmp_path / "none.csv")


class TestAblation:

    def test_model_5_is_default(self, tiny):
        assert configure_for_ablation(tiny, 5) == tiny

    def test_models_1_and_2_differ_in_upscale_only(self, tiny):
        s1 = ablation_switches(configure_for_ablation(tiny, 1))
        s2 = ablation_switches(configure_for_ablation(tiny, 2))
        assert {k for k in s1 if s1[k] != s2[k]} == {"upscale_mode"}

    def test_model_3_unbounded_critic_without_encoder(self, tiny, tiny_data):
        config = configure_for_ablation(tiny, 3)
        assert not config.discriminator.sigmoid and not config.use_encoder
        assert config.loss_mode == "mse_adversarial"
        state = train(config, tiny_data)
        assert state.encoder is None
        assert all(r.latent == 0.0 and r.content > 0.0 for r in state.curves)

    def test_mse_adversarial_weights(self, tiny):
        w = effective_weights(configure_for_ablation(tiny, 2))
        assert w.lambda_spectral == 0.0 and w.eta_spatial == 0.0 and w.nu_content == 1.0 and w.mu_latent == 0.0


class TestGridSearch:

    def test_grid(self, tiny, tiny_data):
        frame = grid_search(
            tiny, {"sigma_adversarial": [0.0063, 0.01]}, tiny_data,
            lambda state, data: {"final_total": state.curves[-1].total},
        )
        assert list(frame["sigma_adversarial"]) == [0.0063, 0.01]
        assert frame["final_total"].notna().all()

    def test_unknown_weight(self, tiny, tiny_data):
        with pytest.raises(ConfigError, match="unknown"):
            grid_search(tiny, {"gamma": [1.0]}, tiny_data, lambda s, d: {})
