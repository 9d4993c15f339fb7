"""NIQE on radiance bands."""

import numpy as np
import pytest

from services.niqe import (
    N_FEATURES,
    NIQENotFittedError,
    estimate_aggd_params,
    fit_niqe,
    mscn,
    niqe_features,
    niqe_image,
    niqe_score,
)


class TestAGGD:

    def test_gaussian_samples(self, rng):
        alpha, bl, br = estimate_aggd_params(rng.normal(0.0, 2.0, 200_000))
        assert alpha == pytest.approx(2.0, abs=0.1)
        assert bl == pytest.approx(2.0 * np.sqrt(2.0), rel=0.05)
        assert br == pytest.approx(2.0 * np.sqrt(2.0), rel=0.05)

    def test_laplacian_is_peakier(self, rng):
        alpha, _, _ = estimate_aggd_params(rng.laplace(0.0, 1.0, 200_000))
        assert alpha == pytest.approx(1.0, abs=0.1)

    def test_constant_input(self):
        assert estimate_aggd_params(np.zeros(100)) == (0.0, 0.0, 0.0)


class TestFeatures:

    def test_block_grid(self, synth16):
        feats = niqe_features(synth16.data[0], block_size=16)
        assert feats.shape == (16, N_FEATURES)
        assert np.all(np.isfinite(feats))

    def test_mscn_of_constant(self):
        np.testing.assert_allclose(mscn(np.full((8, 8), 100.0)), 0.0, atol=1e-9)

    def test_too_small(self):
        with pytest.raises(NIQENotFittedError):
            niqe_features(np.zeros((8, 8)), block_size=16)


class TestModel:

    def test_fit_uses_every_band(self, synth16):
        model = fit_niqe([synth16])
        assert model.n_blocks == 16 * synth16.bands
        assert model.mu.shape == (N_FEATURES,) and model.cov.shape == (N_FEATURES, N_FEATURES)

    def test_noise_scores_worse(self, synth16, rng):
        model = fit_niqe([synth16])
        clean = niqe_image(model, synth16.data[3])
        noise = niqe_image(model, rng.uniform(0, 255, (64, 64)))
        assert 0.0 <= clean < noise

    def test_score_is_band_mean(self, synth16):
        model = fit_niqe([synth16])
        per_band = [niqe_image(model, b) for b in synth16.data[:2]]
        assert niqe_score(model, synth16.data[:2]) == pytest.approx(np.mean(per_band))

    def test_unfitted(self, synth16):
        with pytest.raises(NIQENotFittedError):
            niqe_score(None, synth16)

    def test_empty_fit(self):
        with pytest.raises(NIQENotFittedError):
            fit_niqe([])
