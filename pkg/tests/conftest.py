import os
import sys
import tempfile
from pathlib import Path

# до импорта config: реестр, логи и запуски пишутся во временном каталоге
_TMP = Path(tempfile.mkdtemp(prefix="hsisr-tests-"))
os.environ.setdefault("HSISR_LOG_DIR", str(_TMP / "logs"))
os.environ.setdefault("HSISR_RUNS_DIR", str(_TMP / "runs"))
os.environ.setdefault("HSISR_DATABASE_URL", f"sqlite+aiosqlite:///{_TMP / 'registry.db'}")
os.environ.setdefault("HSISR_REGISTRY_ENABLED", "1")
os.environ.pop("HSISR_SEED", None)

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

import numpy as np  # noqa: E402
import pytest  # noqa: E402
import torch  # noqa: E402

from services.hsi_data import HSICube, SynthSpec, default_wavelengths, synth_cube  # noqa: E402
from services.train_config import preset_config  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def make_cube(data: np.ndarray) -> HSICube:
    return HSICube(data=data, wavelengths=default_wavelengths(data.shape[0]))


@pytest.fixture
def synth16() -> HSICube:
    return synth_cube(SynthSpec(height=64, width=64, bands=16, n_endmembers=4, smoothness=8.0, seed=7))


def tiny_config(**train):
    """Крошечная конфигурация для быстрых прогонов обучения."""
    sections = {
        "train": {"pretrain_iters": 2, "joint_iters": 4, "batch_size": 2, "eval_period": 2, **train},
        "data": {"bands": 4, "hr_patch": 16, "stride": 16, "scene_size": 32, "n_scenes": 2},
        "generator": {"n_resblocks": 1, "feature_width": 4},
        "discriminator": {"n_maxpool_blocks": 2, "base_channels": 4, "dense_width": 8},
        "encoder": {"latent_dim": 8, "dense_width": 8},
    }
    return preset_config("desk", 2, **sections)


@pytest.fixture
def tiny():
    return tiny_config()
