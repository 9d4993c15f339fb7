"""
Конфигурация запуска: pydantic-модели + чтение/запись файла `key = value` с [секциями].
"""

from __future__ import annotations

import configparser
import math
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import (
    ABLATION_MODELS,
    EVAL_PERIOD,
    LOSS_WEIGHT_PRESETS,
    SCALE_PRESETS,
    SEED_OVERRIDE,
    SUPPORTED_SCALES,
)


class ConfigError(ValueError):
    """Ошибка конфигурации (CLI отвечает кодом 2)"""
    pass


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


def _check_scale(v: int) -> int:
    if v not in SUPPORTED_SCALES:
        raise ValueError(f"scale must be one of {SUPPORTED_SCALES}")
    return v


# ---------- networks ----------

class GeneratorConfig(_Frozen):
    bands: int = Field(16, ge=1)
    n_resblocks: int = Field(34, ge=1)
    feature_width: int = Field(32, ge=1)
    first_kernel: int = Field(16, ge=1)
    residual_scale: float = Field(0.1, gt=0.0, le=1.0)
    scale: int = 2
    conv_mode: Literal["3d", "2d"] = "3d"
    upscale_mode: Literal["shuffle", "resize"] = "shuffle"
    single_stage_upscale: bool = False
    global_skip: bool = False

    @field_validator("scale")
    @classmethod
    def valid_scale(cls, v: int) -> int:
        return _check_scale(v)


class DiscriminatorConfig(_Frozen):
    bands: int = Field(16, ge=1)
    n_maxpool_blocks: int = Field(8, ge=1)
    base_channels: int = Field(64, ge=1)
    # ширина D_mu (выход head); 0 = base_channels
    mu_channels: int = Field(0, ge=0)
    dense_width: int = Field(1024, ge=1)
    patch_size: int = Field(384, ge=1)
    sigmoid: bool = False
    # keras-конвенция: running = momentum * running + (1 - momentum) * batch
    bn_momentum: float = Field(0.9, gt=0.0, lt=1.0)
    bn_eps: float = Field(1e-5, gt=0.0)

    @property
    def mu_width(self) -> int:
        return self.mu_channels or self.base_channels

    @model_validator(mode="after")
    def patch_reaches_dense(self) -> "DiscriminatorConfig":
        factor = 2 ** (self.n_maxpool_blocks // 2)
        if self.patch_size % factor:
            raise ValueError(
                f"patch_size {self.patch_size} must be divisible by {factor} for {self.n_maxpool_blocks} blocks"
            )
        return self


class EncoderConfig(_Frozen):
    bands: int = Field(16, ge=1)
    channel_schedule: tuple[int, ...] = (64, 64, 128, 128, 256, 256, 512, 512)
    latent_dim: int = Field(1024, ge=1)
    dense_width: int = Field(1024, ge=1)
    patch_size: int = Field(384, ge=1)

    @field_validator("channel_schedule")
    @classmethod
    def valid_schedule(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if len(v) != 8:
            raise ValueError("channel_schedule must list 8 channel counts")
        if v[0] != 64 or v[-1] != 512:
            raise ValueError("channel_schedule must start at 64 and end at 512")
        for a, b in zip(v, v[1:]):
            if b not in (a, 2 * a):
                raise ValueError("channel_schedule may only keep or double the depth")
        return v


# ---------- losses / optimiser / data ----------

class LossWeights(_Frozen):
    lambda_spectral: float = Field(12.5, ge=0.0)
    eta_spatial: float = Field(12.5, ge=0.0)
    sigma_adversarial: float = Field(0.0063, ge=0.0)
    mu_latent: float = Field(0.015, ge=0.0)
    # pixel MSE: используется только в режиме mse_adversarial (ablation 1-4)
    nu_content: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def not_all_zero(self) -> "LossWeights":
        if not any((self.lambda_spectral, self.eta_spatial, self.sigma_adversarial,
                    self.mu_latent, self.nu_content)):
            raise ValueError("at least one loss weight must be positive")
        return self

    @classmethod
    def preset(cls, name: str) -> "LossWeights":
        try:
            lam, eta, sig, mu = LOSS_WEIGHT_PRESETS[name]
        except KeyError as e:
            raise ConfigError(f"unknown loss preset {name!r}, known: {sorted(LOSS_WEIGHT_PRESETS)}") from e
        return cls(lambda_spectral=lam, eta_spatial=eta, sigma_adversarial=sig, mu_latent=mu)


class AdamConfig(_Frozen):
    lr: float = Field(1e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-7, gt=0.0)


class DataConfig(_Frozen):
    source: Literal["synthetic", "cubes"] = "synthetic"
    cube_paths: tuple[str, ...] = ()
    normalize: bool = False
    bands: int = Field(16, ge=1)
    n_scenes: int = Field(4, ge=1)
    scene_size: int = Field(256, ge=1)
    n_endmembers: int = Field(4, ge=2)
    smoothness: float = Field(8.0, gt=0.0)
    hr_patch: int = Field(64, ge=1)
    stride: int = Field(32, ge=1)
    train_ratio: float = Field(0.7, gt=0.0, lt=1.0)
    snr_db: float = math.inf

    @field_validator("snr_db")
    @classmethod
    def valid_snr(cls, v: float) -> float:
        if math.isinf(v) and v > 0:
            return v
        if not (0.0 < v < 200.0):
            raise ValueError("snr_db must be inf or in (0, 200)")
        return v

    @model_validator(mode="after")
    def paths_given(self) -> "DataConfig":
        if self.source == "cubes" and not self.cube_paths:
            raise ValueError("source = cubes needs cube_paths")
        return self


# ---------- train ----------

LossVariant = Literal["ssrp", "wasserstein_plain", "js"]
LossMode = Literal["ssrp", "mse_adversarial"]


class TrainConfig(_Frozen):
    loss_weights: LossWeights = LossWeights()
    scale: int = 2
    adam: AdamConfig = AdamConfig()
    pretrain_iters: int = Field(5000, ge=0)
    joint_iters: int = Field(10000, ge=1)
    batch_size: int = Field(8, ge=1)
    critic_steps_per_gen: int = Field(1, ge=1)
    loss_variant: LossVariant = "ssrp"
    ablation_model: int = Field(5, ge=1, le=5)
    seed: int = 0
    eval_period: int = Field(EVAL_PERIOD, ge=1)
    checkpoint_period: int = Field(0, ge=0)   # 0 = только финальный чекпоинт
    use_encoder: bool = True
    loss_mode: LossMode = "ssrp"
    spectral_mode: Literal["template", "literal"] = "template"
    context_max_positions: int = Field(256, ge=1)
    gradient_penalty: bool = False
    gp_weight: float = Field(10.0, ge=0.0)
    data: DataConfig = DataConfig()
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig(patch_size=64)
    encoder: EncoderConfig = EncoderConfig(patch_size=64)

    @field_validator("scale")
    @classmethod
    def valid_scale(cls, v: int) -> int:
        return _check_scale(v)

    @model_validator(mode="after")
    def sections_consistent(self) -> "TrainConfig":
        bands = {self.data.bands, self.generator.bands, self.discriminator.bands, self.encoder.bands}
        if len(bands) != 1:
            raise ValueError(f"band counts disagree across sections: {sorted(bands)}")
        if self.generator.scale != self.scale:
            raise ValueError("generator.scale must equal train scale")
        if self.data.hr_patch % self.scale:
            raise ValueError("data.hr_patch must be divisible by scale")
        if self.discriminator.patch_size != self.data.hr_patch or self.encoder.patch_size != self.data.hr_patch:
            raise ValueError("discriminator/encoder patch_size must equal data.hr_patch")
        if self.spectral_mode == "literal" and self.discriminator.mu_width != self.data.bands:
            raise ValueError(
                f"spectral_mode = literal needs discriminator.mu_channels == bands ({self.data.bands}), "
                f"got D_mu width {self.discriminator.mu_width}"
            )
        return self


# ---------- presets ----------

def preset_config(preset: str = "desk", scale: int = 2, **sections: dict[str, Any]) -> TrainConfig:
    """
    Собирает согласованный TrainConfig из SCALE_PRESETS и переопределений по секциям
    (`train`, `loss`, `adam`, `data`, `generator`, `discriminator`, `encoder`).
    """
    if preset not in SCALE_PRESETS:
        raise ConfigError(f"unknown preset {preset!r}, known: {sorted(SCALE_PRESETS)}")
    p = SCALE_PRESETS[preset]

    train = dict(sections.get("train") or {})
    scale = int(train.pop("scale", scale))
    data = {
        "bands": p["bands"], "hr_patch": p["hr_patch"], "stride": p["stride"],
        "scene_size": p["scene_size"], "n_scenes": p["n_scenes"],
        **(sections.get("data") or {}),
    }
    bands = int(data["bands"])
    patch = int(data["hr_patch"])

    generator = {
        "bands": bands, "scale": scale, "n_resblocks": p["n_resblocks"],
        "feature_width": p["feature_width"], "first_kernel": p["first_kernel"],
        "global_skip": p["global_skip"],
        **(sections.get("generator") or {}),
    }
    discriminator = {
        "bands": bands, "patch_size": patch, "n_maxpool_blocks": p["n_maxpool_blocks"],
        "base_channels": p["base_channels"], "dense_width": p["dense_width"],
        # literal-режим сравнивает D_mu с кубом поканально
        "mu_channels": bands if train.get("spectral_mode") == "literal" else 0,
        **(sections.get("discriminator") or {}),
    }
    encoder = {
        "bands": bands, "patch_size": patch, "latent_dim": p["latent_dim"],
        "dense_width": p["dense_width"],
        **(sections.get("encoder") or {}),
    }

    loss = dict(sections.get("loss") or {})
    loss_preset = loss.pop("preset", "default")
    weights = LossWeights.preset(str(loss_preset)).model_dump()
    weights.update(loss)

    payload = {
        "scale": scale,
        "batch_size": p["batch_size"],
        "pretrain_iters": p["pretrain_iters"],
        "joint_iters": p["joint_iters"],
        **train,
        "loss_weights": weights,
        "adam": sections.get("adam") or {},
        "data": data,
        "generator": generator,
        "discriminator": discriminator,
        "encoder": encoder,
    }
    try:
        return TrainConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def ablation_switches(config: TrainConfig) -> dict[str, Any]:
    """Текущие архитектурные/лоссовые переключатели конфига."""
    return {
        "generator_conv": config.generator.conv_mode,
        "upscale_mode": config.generator.upscale_mode,
        "critic_sigmoid": config.discriminator.sigmoid,
        "use_encoder": config.use_encoder,
        "loss_mode": config.loss_mode,
    }


def with_switches(config: TrainConfig, switches: dict[str, Any]) -> TrainConfig:
    if switches["loss_mode"] == "mse_adversarial":
        weights = config.loss_weights.model_copy(update={"nu_content": 1.0})
    else:
        weights = config.loss_weights.model_copy(update={"nu_content": 0.0})
    return config.model_copy(update={
        "generator": config.generator.model_copy(update={
            "conv_mode": switches["generator_conv"],
            "upscale_mode": switches["upscale_mode"],
        }),
        "discriminator": config.discriminator.model_copy(update={"sigmoid": switches["critic_sigmoid"]}),
        "use_encoder": switches["use_encoder"],
        "loss_mode": switches["loss_mode"],
        "loss_weights": weights,
    })


def ablation_preset(model: int) -> dict[str, Any]:
    if model not in ABLATION_MODELS:
        raise ConfigError(f"ablation model must be one of {sorted(ABLATION_MODELS)}, got {model}")
    return dict(ABLATION_MODELS[model])


# ---------- file I/O ----------

_TUPLE_FIELDS = {("data", "cube_paths"), ("encoder", "channel_schedule")}
_SECTIONS = ("train", "loss", "adam", "data", "generator", "discriminator", "encoder")


def _coerce(section: str, key: str, value: str) -> Any:
    if (section, key) in _TUPLE_FIELDS:
        return tuple(p.strip() for p in value.split(",") if p.strip())
    if value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return value


def read_config_text(text: str) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config parse error: {e}") from e

    unknown = [s for s in parser.sections() if s not in _SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")

    sections = {
        s: {k: _coerce(s, k, v) for k, v in parser.items(s)}
        for s in parser.sections()
    }
    train = sections.setdefault("train", {})
    preset = str(train.pop("preset", "desk"))
    return preset_config(preset, **sections)


def load_config(path: str | Path, env_override: bool = True) -> TrainConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    config = read_config_text(p.read_text(encoding="utf-8"))
    if env_override and SEED_OVERRIDE is not None:
        config = config.model_copy(update={"seed": SEED_OVERRIDE})
    return config


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    return str(value)


def dump_config(config: TrainConfig) -> str:
    dumped = config.model_dump()
    lines: list[str] = []

    def section(name: str, items: dict[str, Any]) -> None:
        lines.append(f"[{name}]")
        for k, v in items.items():
            if (name, k) in _TUPLE_FIELDS and not v:
                continue
            lines.append(f"{k} = {_fmt(v)}")
        lines.append("")

    train = {k: v for k, v in dumped.items() if not isinstance(v, dict)}
    section("train", train)
    section("loss", dumped["loss_weights"])
    for name in ("adam", "data", "generator", "discriminator", "encoder"):
        section(name, dumped[name])
    return "\n".join(lines)


def save_config(config: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")
