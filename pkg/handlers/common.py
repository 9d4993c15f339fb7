"""Общие куски для подкоманд: коды выхода, типы аргументов, сборка конфига и данных, манифест."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from config import RUNS_DIR, SCALE_PRESETS, SEED_OVERRIDE, SUPPORTED_SCALES
from services.hsi_data import PatchPair, PatchPairDataset
from services.run_manifest import RunManifest
from services.train_config import ConfigError, TrainConfig, load_config, preset_config
from services.trainer import TrainData, build_training_set, prepare_data

logger = logging.getLogger("hsisr")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def snr_arg(value: str) -> float:
    """`inf` или число в (0, 200)."""
    v = value.strip().lower()
    if v in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        snr = float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"snr must be 'inf' or a number, got {value!r}")
    if not (0.0 < snr < 200.0):
        raise argparse.ArgumentTypeError(f"snr must be in (0, 200) dB or inf, got {value}")
    return snr


def positive_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}")
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def add_config_args(p: argparse.ArgumentParser) -> None:
    """Аргументы, из которых собирается TrainConfig (train / ablate)."""
    p.add_argument("--config", help="run config file ([section] + key = value)")
    p.add_argument("--preset", choices=sorted(SCALE_PRESETS), default="desk",
                   help="scale preset used when --config is not given")
    p.add_argument("--scale", type=int, choices=SUPPORTED_SCALES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pretrain-iters", type=int, default=None)
    p.add_argument("--joint-iters", type=positive_int, default=None)
    p.add_argument("--eval-period", type=positive_int, default=None)
    p.add_argument("--batch-size", type=positive_int, default=None)
    p.add_argument("--generator-conv", choices=("3d", "2d"), default=None,
                   help="generator convolutions: 3d spectral-spatial or 2d per-band (applied after --ablation)")


def override(config: TrainConfig, **update: Any) -> TrainConfig:
    """model_copy без валидации опасен: пересобираем через model_validate."""
    update = {k: v for k, v in update.items() if v is not None}
    if not update:
        return config
    try:
        return TrainConfig.model_validate({**config.model_dump(), **update})
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def config_from_args(args: argparse.Namespace) -> TrainConfig:
    if args.config:
        if args.scale is not None:
            raise ConfigError("--scale conflicts with --config: set [train] scale in the config file")
        config = load_config(args.config)
    else:
        config = preset_config(args.preset, args.scale or 2)
        if SEED_OVERRIDE is not None:
            config = override(config, seed=SEED_OVERRIDE)

    return override(
        config,
        seed=args.seed,
        pretrain_iters=args.pretrain_iters,
        joint_iters=args.joint_iters,
        eval_period=args.eval_period,
        batch_size=args.batch_size,
    )


def with_generator_conv(config: TrainConfig, conv_mode: str | None) -> TrainConfig:
    """Переключатели ablation ставят 3d; --generator-conv перебивает их последним."""
    if conv_mode is None:
        return config
    return override(config, generator={**config.generator.model_dump(), "conv_mode": conv_mode})


def config_seeds(config: TrainConfig) -> dict[str, int]:
    return {
        "config": config.seed,
        "generator_init": config.seed,
        "critic_init": config.seed + 1,
        "encoder_init": config.seed + 2,
        "batch_rng": config.seed + 4,
        "split": config.seed,
        "synthetic_scenes": config.seed * 1000,
    }


def build_data(config: TrainConfig) -> tuple[PatchPairDataset, TrainData]:
    ds = build_training_set(config)
    return ds, prepare_data(ds, config.scale)


def eval_pairs(ds: PatchPairDataset) -> list[PatchPair]:
    """Тестовая часть; если её нет (крошечный набор), берём обучающую."""
    pairs = ds.test_pairs()
    if not pairs:
        logger.warning("dataset has no test pairs, evaluating on the training split")
        pairs = ds.train_pairs()
    return pairs


def default_out(args: argparse.Namespace, name: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path(RUNS_DIR) / name


def new_manifest(args: argparse.Namespace) -> RunManifest:
    argv = getattr(args, "argv", None) or sys.argv[1:]
    return RunManifest(command=["hsisr", *argv])
