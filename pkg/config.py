import os
from dotenv import load_dotenv

load_dotenv()


def _env_flag(name: str, default: str = "0") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


# --------------------
# RUNTIME
# --------------------
TOOL_VERSION = "0.3.0"

LOG_DIR = os.getenv("HSISR_LOG_DIR", "logs")
LOG_LEVEL = os.getenv("HSISR_LOG_LEVEL", "INFO").strip().upper()

RUNS_DIR = os.getenv("HSISR_RUNS_DIR", "runs")

# Пустая строка = не переопределять seed из конфига
_SEED_RAW = os.getenv("HSISR_SEED", "").strip()
SEED_OVERRIDE: int | None = int(_SEED_RAW) if _SEED_RAW else None

TORCH_THREADS = int(os.getenv("HSISR_TORCH_THREADS", "0"))  # 0 = torch default

# --------------------
# RUN REGISTRY
# --------------------
REGISTRY_ENABLED = _env_flag("HSISR_REGISTRY_ENABLED", "1")
DATABASE_URL = os.getenv("HSISR_DATABASE_URL", f"sqlite+aiosqlite:///./{RUNS_DIR}/registry.db")

# --------------------
# DATA
# --------------------
WAVELENGTH_RANGE_NM = (450.0, 950.0)
SUPPORTED_SCALES = (2, 4, 8)
RADIANCE_MAX = 255.0

# --------------------
# LOSS WEIGHTS (lambda, eta, sigma, mu)
# --------------------
# "default": усреднённые лучшие значения поиска, остальные берут лучшую строку для масштаба
LOSS_WEIGHT_PRESETS = {
    "default": (12.5, 12.5, 0.0063, 0.015),
    "x2": (12.8, 12.9, 0.008, 0.015),
    "x4": (12.4, 12.4, 0.006, 0.015),
    "x8": (12.3, 12.3, 0.005, 0.015),
}

# --------------------
# SCALE PRESETS
# --------------------
SCALE_PRESETS = {
    "desk": {
        "bands": 16,
        "hr_patch": 64,
        "stride": 32,
        "scene_size": 256,
        "n_scenes": 4,
        "n_resblocks": 2,
        "feature_width": 16,
        "first_kernel": 3,
        "n_maxpool_blocks": 3,
        "base_channels": 16,
        "dense_width": 128,
        "latent_dim": 128,
        "batch_size": 8,
        "pretrain_iters": 200,
        "joint_iters": 500,
        "global_skip": True,
    },
    "full": {
        "bands": 220,
        "hr_patch": 384,
        "stride": 384,
        "scene_size": 1536,
        "n_scenes": 12,
        "n_resblocks": 34,
        "feature_width": 32,
        "first_kernel": 16,
        "n_maxpool_blocks": 8,
        "base_channels": 64,
        "dense_width": 1024,
        "latent_dim": 1024,
        "batch_size": 8,
        "pretrain_iters": 5000,
        "joint_iters": 10000,
        "global_skip": False,
    },
}

# --------------------
# ABLATION (Models 1..5)
# --------------------
# Каждая следующая модель заменяет одну "традиционную" деталь на компонент LE-GAN
ABLATION_MODELS = {
    1: {"generator_conv": "3d", "upscale_mode": "resize", "critic_sigmoid": True,
        "use_encoder": False, "loss_mode": "mse_adversarial"},
    2: {"generator_conv": "3d", "upscale_mode": "shuffle", "critic_sigmoid": True,
        "use_encoder": False, "loss_mode": "mse_adversarial"},
    3: {"generator_conv": "3d", "upscale_mode": "shuffle", "critic_sigmoid": False,
        "use_encoder": False, "loss_mode": "mse_adversarial"},
    4: {"generator_conv": "3d", "upscale_mode": "shuffle", "critic_sigmoid": False,
        "use_encoder": True, "loss_mode": "mse_adversarial"},
    5: {"generator_conv": "3d", "upscale_mode": "shuffle", "critic_sigmoid": False,
        "use_encoder": True, "loss_mode": "ssrp"},
}

# --------------------
# DIAGNOSTICS
# --------------------
EVAL_PERIOD = 50
DENSITY_BINS = 64
IS_CLUSTERS = 10
MIN_DIAG_BATCH = 32
STABILITY_WINDOW = 50
