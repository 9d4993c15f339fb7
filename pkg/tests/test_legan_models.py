"""Tests for the generator, critic and latent encoder."""

import numpy as np
import pytest
import torch

from conftest import make_cube
from services.hsi_data import add_noise_snr
from services.legan_models import (
    ModelShapeError,
    ResBlock,
    critic_block_plan,
    cubes_to_tensor,
    discriminator_forward,
    encoder_forward,
    generator_forward,
    init_weights,
    resblock_forward,
    super_resolve,
    tensor_to_cubes,
    upscale_shuffle,
    upscale_unshuffle,
)
from services.train_config import DiscriminatorConfig, EncoderConfig, GeneratorConfig
from services.trainer import build_training_set, init_state, prepare_data, pretrain


def _gen(**kw) -> GeneratorConfig:
    base = dict(bands=4, n_resblocks=2, feature_width=4, first_kernel=3, scale=2)
    return GeneratorConfig(**{**base, **kw})


def _disc(**kw) -> DiscriminatorConfig:
    base = dict(bands=4, n_maxpool_blocks=2, base_channels=4, dense_width=8, patch_size=16)
    return DiscriminatorConfig(**{**base, **kw})


def _enc(**kw) -> EncoderConfig:
    base = dict(bands=4, latent_dim=8, dense_width=8, patch_size=16)
    return EncoderConfig(**{**base, **kw})


def _finite_difference_check(module, x, n_params=20, eps=1e-6, seed=0):
    """Autodiff vs central differences of sum(outputs) on random scalar parameters (float64)."""
    module = module.double()
    x = x.double()
    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    module(x).sum().backward()

    g = torch.Generator().manual_seed(seed)
    checked = 0
    for _ in range(n_params):
        p = params[int(torch.randint(len(params), (1,), generator=g))]
        flat = p.data.view(-1)
        i = int(torch.randint(flat.numel(), (1,), generator=g))
        analytic = float(p.grad.view(-1)[i])
        orig = float(flat[i])
        with torch.no_grad():
            flat[i] = orig + eps
            up = float(module(x).sum())
            flat[i] = orig - eps
            down = float(module(x).sum())
            flat[i] = orig
        numeric = (up - down) / (2 * eps)
        assert abs(analytic - numeric) <= 1e-3 * max(1.0, abs(numeric)), (analytic, numeric)
        checked += 1
    assert checked >= 20


class TestShuffle:

    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_bijection(self, k):
        x = torch.randn(2, k * k * 3, 5, 5)
        y = upscale_shuffle(x, k)
        assert y.shape == (2, 3, 5 * k, 5 * k)
        assert torch.equal(upscale_unshuffle(y, k), x)
        assert torch.equal(torch.sort(y.flatten()).values, torch.sort(x.flatten()).values)

    def test_full_scale_shapes(self):
        b = 3
        x = torch.randn(1, 4 * 32 * b, 8, 8)
        assert upscale_shuffle(x, 2).shape == (1, 32 * b, 16, 16)

    def test_non_divisible(self):
        with pytest.raises(ModelShapeError):
            upscale_shuffle(torch.zeros(1, 6, 2, 2), 2)


class TestInit:

    def test_deterministic(self):
        a = init_weights(_gen(), 5).tensors
        b = init_weights(_gen(), 5).tensors
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_different_seeds(self):
        a = init_weights(_gen(), 1).tensors["head.weight"]
        b = init_weights(_gen(), 2).tensors["head.weight"]
        assert not torch.equal(a, b)

    def test_analytic_parameter_count(self):
        w = init_weights(GeneratorConfig(bands=16, n_resblocks=2, feature_width=16, first_kernel=3, scale=2), 0)
        head = 1 * 16 * (16 * 3 * 3) + 16
        resblocks = 2 * 2 * (16 * 16 * 27 + 16)
        shuffle = 16 * 64 * 27 + 64
        decoder = 16 + 1
        assert w.n_parameters() == head + resblocks + shuffle + decoder == 57761

    def test_scaling_constants(self):
        w = init_weights(_gen(residual_scale=0.1), 0)
        scales = [float(b.scaling.scale) for b in w.module.resblocks]
        assert scales == [pytest.approx(0.1)] * 2

    def test_all_finite(self):
        for cfg in (_gen(), _disc(), _enc()):
            assert init_weights(cfg, 0).all_finite()


class TestGenerator:

    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_shape_law(self, k):
        w = init_weights(_gen(scale=k), 0)
        x = torch.rand(2, 4, 6, 5)
        assert generator_forward(w, x).shape == (2, 4, 6 * k, 5 * k)

    def test_full_scale_x8(self):
        w = init_weights(_gen(bands=2, n_resblocks=1, feature_width=2, scale=8), 0)
        assert generator_forward(w, torch.rand(1, 2, 48, 48)).shape == (1, 2, 384, 384)

    def test_single_stage_upscale(self):
        w = init_weights(_gen(scale=4, single_stage_upscale=True), 0)
        assert len(w.module.upscale) == 1
        assert generator_forward(w, torch.rand(1, 4, 4, 4)).shape == (1, 4, 16, 16)

    def test_resize_upscale_and_2d_conv(self):
        w = init_weights(_gen(upscale_mode="resize", conv_mode="2d"), 0)
        assert generator_forward(w, torch.rand(1, 4, 4, 4)).shape == (1, 4, 8, 8)

    def test_zero_input_zero_weights(self):
        w = init_weights(_gen(), 0)
        with torch.no_grad():
            for p in w.module.parameters():
                p.zero_()
        assert torch.equal(generator_forward(w, torch.zeros(1, 4, 4, 4)), torch.zeros(1, 4, 8, 8))

    def test_band_mismatch(self):
        w = init_weights(_gen(), 0)
        with pytest.raises(ModelShapeError, match="bands"):
            generator_forward(w, torch.zeros(1, 3, 4, 4))

    def test_accepts_cube_batch(self, rng):
        w = init_weights(_gen(), 0)
        cubes = [make_cube(rng.uniform(0, 255, (4, 4, 4))) for _ in range(3)]
        out = super_resolve(w, cubes, batch_size=2)
        assert len(out) == 3 and out[0].height == 8
        assert all(0 <= c.data.min() and c.data.max() <= 255 for c in out)

    def test_finite_differences(self):
        w = init_weights(_gen(bands=2, n_resblocks=1, feature_width=2), 0)
        _finite_difference_check(w.module, torch.full((1, 2, 2, 2), 0.5))


class TestResBlock:

    def test_zero_residual_is_identity(self):
        block = ResBlock(3, 0.1)
        with torch.no_grad():
            block.conv2.weight.zero_()
            block.conv2.bias.zero_()
        x = torch.randn(2, 3, 4, 5, 5)
        assert torch.equal(resblock_forward(block, x), x)

    def test_zero_scale_is_identity(self):
        block = ResBlock(3, 0.1)
        block.scaling.scale.fill_(0.0)
        x = torch.randn(1, 3, 2, 4, 4)
        assert torch.equal(resblock_forward(block, x), x)

    def test_linear_in_scale(self):
        block = ResBlock(3, 1.0).double()
        x = torch.randn(1, 3, 2, 4, 4, dtype=torch.float64)
        with torch.no_grad():
            full = resblock_forward(block, x)
            block.scaling.scale.fill_(0.1)
            tenth = resblock_forward(block, x)
            torch.testing.assert_close(full - tenth, 0.9 * block.residual(x))

    def test_channel_mismatch(self):
        w = init_weights(_gen(), 0)
        with pytest.raises(ModelShapeError):
            resblock_forward(w, torch.zeros(1, 5, 2, 4, 4))


class TestDiscriminator:

    def test_block_plan(self):
        plan = critic_block_plan(_disc(n_maxpool_blocks=4))
        assert [s for _, _, s in plan] == [1, 2, 1, 2]
        assert [o for _, o, _ in plan] == [4, 4, 8, 8]

    def test_mu_width_from_config(self):
        cfg = _disc(mu_channels=6)
        assert critic_block_plan(cfg)[0] == (6, 4, 1)
        taps = discriminator_forward(init_weights(cfg, 0), torch.rand(2, 4, 16, 16))
        assert taps.feat_mu.shape == (2, 6, 16, 16)
        assert taps.feat_phi.shape == (2, 4, 8, 8)

    def test_taps_shapes(self):
        w = init_weights(_disc(), 0)
        taps = discriminator_forward(w, torch.rand(3, 4, 16, 16))
        assert taps.score.shape == (3,)
        assert taps.feat_mu.shape == (3, 4, 16, 16)
        assert taps.feat_phi.shape == (3, 4, 8, 8)
        assert taps.penultimate.shape == (3, 4 * 8 * 8)

    def test_eval_mode_deterministic(self):
        w = init_weights(_disc(), 0)
        x = torch.rand(2, 4, 16, 16)
        a, b = discriminator_forward(w, x), discriminator_forward(w, x)
        assert torch.equal(a.score, b.score) and torch.equal(a.penultimate, b.penultimate)

    def test_spatial_mismatch(self):
        w = init_weights(_disc(), 0)
        with pytest.raises(ModelShapeError):
            discriminator_forward(w, torch.rand(1, 4, 8, 8))

    def test_unbounded_without_sigmoid(self):
        w = init_weights(_disc(), 0)
        x = torch.rand(8, 4, 16, 16)
        small = discriminator_forward(w, x).score.abs().max()
        large = discriminator_forward(w, 1000 * x).score.abs().max()
        assert large > 1.0 and large > small

    def test_sigmoid_bounded(self):
        w = init_weights(_disc(sigmoid=True), 0)
        s = discriminator_forward(w, 1000 * torch.rand(4, 4, 16, 16)).score
        assert bool(((s >= 0) & (s <= 1)).all())

    def test_finite_differences_wrt_input(self):
        w = init_weights(_disc(n_maxpool_blocks=1, patch_size=16), 0)
        d = w.module.double()
        x = torch.rand(1, 4, 16, 16, dtype=torch.float64, requires_grad=True)
        d(x).sum().backward()
        g = torch.Generator().manual_seed(0)
        for _ in range(20):
            idx = tuple(int(torch.randint(n, (1,), generator=g)) for n in x.shape)
            with torch.no_grad():
                xp, xm = x.detach().clone(), x.detach().clone()
                xp[idx] += 1e-6
                xm[idx] -= 1e-6
                numeric = float(d(xp).sum() - d(xm).sum()) / 2e-6
            analytic = float(x.grad[idx])
            assert abs(analytic - numeric) <= 1e-3 * max(1.0, abs(numeric))


class TestEncoder:

    def test_latent_length(self):
        w = init_weights(_enc(), 0)
        assert encoder_forward(w, torch.rand(3, 4, 16, 16)).shape == (3, 8)

    def test_identical_patches_identical_latents(self):
        w = init_weights(_enc(), 0)
        x = torch.rand(1, 4, 16, 16)
        out = encoder_forward(w, torch.cat([x, x]))
        torch.testing.assert_close(out[0], out[1])

    def test_dim_mismatch(self):
        w = init_weights(_enc(), 0)
        with pytest.raises(ModelShapeError):
            encoder_forward(w, torch.rand(1, 4, 12, 12))

    def test_stride_follows_depth_doubling(self):
        w = init_weights(_enc(), 0)
        convs = [m for m in w.module.features if isinstance(m, torch.nn.Conv2d)]
        assert len(convs) == 8
        assert [c.stride[0] for c in convs] == [1, 1, 2, 1, 2, 1, 2, 1]

    def test_finite_differences(self):
        w = init_weights(_enc(), 0)
        g = torch.Generator().manual_seed(1)
        _finite_difference_check(w.module, torch.rand(1, 4, 16, 16, generator=g))

    def test_noisy_copy_closer_than_unrelated_patch(self, tiny):
        data = prepare_data(build_training_set(tiny), tiny.scale)
        state = pretrain(init_state(tiny), data)
        held_out = tensor_to_cubes(data.test_hr, data.wavelengths)
        n = len(held_out)
        assert n >= 2
        for seed in range(5):
            for i, cube in enumerate(held_out):
                noisy = add_noise_snr(cube, 40.0, seed=seed)
                z = encoder_forward(state.encoder, [cube, noisy, held_out[(i + 1) % n]])
                near = float((z[0] - z[1]).norm())
                far = float((z[0] - z[2]).norm())
                assert near < far, (seed, i, near, far)


class TestCubeTensors:

    def test_round_trip_scaling(self, rng):
        cubes = [make_cube(rng.uniform(0, 255, (2, 3, 3)))]
        x = cubes_to_tensor(cubes)
        assert float(x.max()) <= 1.0
        back = tensor_to_cubes(x, cubes[0].wavelengths)
        np.testing.assert_allclose(back[0].data, cubes[0].data, atol=1e-4)

    def test_mixed_shapes_rejected(self, rng):
        with pytest.raises(ModelShapeError):
            cubes_to_tensor([make_cube(np.zeros((2, 3, 3))), make_cube(np.zeros((2, 4, 4)))])
