"""
Три сети LE-GAN: генератор G, критик D и латентный энкодер L_E.

Сети работают в "сетевых единицах" (радиация / 255), батч кубов это тензор (N, bands, H, W).
Веса живут в `NetworkWeights`: конфиг + nn.Module + seed инициализации.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from config import RADIANCE_MAX
from services.hsi_data import HSICube, default_wavelengths, resample_matrix
from services.train_config import DiscriminatorConfig, EncoderConfig, GeneratorConfig

logger = logging.getLogger(__name__)

NetConfig = Union[GeneratorConfig, DiscriminatorConfig, EncoderConfig]
CubeBatch = Union[torch.Tensor, Sequence[HSICube]]

MAX_CRITIC_CHANNELS = 512


class ModelShapeError(ValueError):
    """Вход не совпадает с архитектурой сети"""
    pass


# ---------- tensors <-> cubes ----------

def cubes_to_tensor(cubes: Sequence[HSICube], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    if not cubes:
        raise ModelShapeError("empty cube batch")
    shapes = {c.data.shape for c in cubes}
    if len(shapes) != 1:
        raise ModelShapeError(f"cubes in a batch must share a shape, got {sorted(shapes)}")
    stacked = np.stack([c.data for c in cubes]).astype(np.float64) / RADIANCE_MAX
    return torch.as_tensor(stacked, dtype=dtype)


def tensor_to_cubes(
    x: torch.Tensor,
    wavelengths: Sequence[float] | None = None,
    clip: bool = True,
) -> list[HSICube]:
    data = x.detach().to("cpu", torch.float64).numpy() * RADIANCE_MAX
    if clip:
        data = np.clip(data, 0.0, RADIANCE_MAX)
    wl = tuple(wavelengths) if wavelengths is not None else default_wavelengths(data.shape[1])
    return [HSICube(data=d, wavelengths=wl) for d in data]


def _as_batch(x: CubeBatch, like: nn.Module) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        batch = x
    else:
        batch = cubes_to_tensor(list(x))
    if batch.ndim != 4:
        raise ModelShapeError(f"expected a (N, bands, H, W) batch, got shape {tuple(batch.shape)}")
    param = next(like.parameters())
    return batch.to(dtype=param.dtype, device=param.device)


# ---------- generator ----------

class ScaleLayer(nn.Module):
    """Умножение на константу residual_scale (буфер, не обучается)."""

    def __init__(self, value: float) -> None:
        super().__init__()
        self.register_buffer("scale", torch.tensor(float(value)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.scale


def _conv3d(in_ch: int, out_ch: int, conv_mode: str) -> nn.Conv3d:
    if conv_mode == "2d":
        return nn.Conv3d(in_ch, out_ch, kernel_size=(1, 3, 3), padding=(0, 1, 1))
    return nn.Conv3d(in_ch, out_ch, kernel_size=3, padding=1)


class ResBlock(nn.Module):
    def __init__(self, channels: int, residual_scale: float, conv_mode: str = "3d") -> None:
        super().__init__()
        self.channels = channels
        self.conv1 = _conv3d(channels, channels, conv_mode)
        self.conv2 = _conv3d(channels, channels, conv_mode)
        self.scaling = ScaleLayer(residual_scale)

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.relu(self.conv1(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.scaling(self.residual(x))


def upscale_shuffle(features: torch.Tensor, k: int) -> torch.Tensor:
    """
    Периодическая перестановка sub-pixel: (N, k²·C, H/k, W/k) -> (N, C, H, W).
    Только перестановка элементов, без арифметики.
    """
    if features.ndim != 4:
        raise ModelShapeError(f"upscale_shuffle expects (N, C, h, w), got {tuple(features.shape)}")
    if k < 1 or features.shape[1] % (k * k):
        raise ModelShapeError(f"channels {features.shape[1]} not divisible by k^2 = {k * k}")
    return F.pixel_shuffle(features, k)


def upscale_unshuffle(features: torch.Tensor, k: int) -> torch.Tensor:
    if features.ndim != 4:
        raise ModelShapeError(f"upscale_unshuffle expects (N, C, H, W), got {tuple(features.shape)}")
    if k < 1 or features.shape[2] % k or features.shape[3] % k:
        raise ModelShapeError(f"spatial size {tuple(features.shape[2:])} not divisible by k = {k}")
    return F.pixel_unshuffle(features, k)


class ShuffleStage(nn.Module):
    """conv F -> F·s², затем sub-pixel перестановка каждого спектрального слоя."""

    def __init__(self, channels: int, factor: int, conv_mode: str) -> None:
        super().__init__()
        self.channels = channels
        self.factor = factor
        self.conv = _conv3d(channels, channels * factor * factor, conv_mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, b, h, w = x.shape
        s = self.factor
        y = self.conv(x)
        # (N, F·s², b, h, w) -> (N, F·b·s², h, w): s² подряд идущих каналов на каждую пару (F, band)
        y = y.view(n, c, s * s, b, h, w).permute(0, 1, 3, 2, 4, 5).reshape(n, c * b * s * s, h, w)
        y = upscale_shuffle(y, s)
        return F.relu(y.reshape(n, c, b, h * s, w * s))


class ResizeStage(nn.Module):
    """Прогрессивный resize (nearest) + conv: «традиционный» апскейл для ablation."""

    def __init__(self, channels: int, factor: int, conv_mode: str) -> None:
        super().__init__()
        self.factor = factor
        self.conv = _conv3d(channels, channels, conv_mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.interpolate(x, scale_factor=(1, self.factor, self.factor), mode="nearest")
        return F.relu(self.conv(y))


def _upscale_factors(scale: int, single_stage: bool) -> list[int]:
    if single_stage:
        return [scale]
    return [2] * int(round(math.log2(scale)))


@lru_cache(maxsize=32)
def _resample_pair(h: int, w: int, scale: int) -> tuple[np.ndarray, np.ndarray]:
    return resample_matrix(h, h * scale), resample_matrix(w, w * scale)


def bicubic_upsample_tensor(x: torch.Tensor, scale: int) -> torch.Tensor:
    """Тот же Catmull-Rom, что в hsi_data, но дифференцируемо и батчем."""
    mh, mw = _resample_pair(int(x.shape[-2]), int(x.shape[-1]), scale)
    th = torch.as_tensor(mh, dtype=x.dtype, device=x.device)
    tw = torch.as_tensor(mw, dtype=x.dtype, device=x.device)
    return torch.einsum("Hh,nbhw,Ww->nbHW", th, x, tw)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig) -> None:
        super().__init__()
        self.config = config
        fw = config.feature_width
        depth = config.bands if config.conv_mode == "3d" else 1
        self.head = nn.Conv3d(
            1, fw,
            kernel_size=(depth, config.first_kernel, config.first_kernel),
            padding="same",
        )
        self.resblocks = nn.ModuleList(
            ResBlock(fw, config.residual_scale, config.conv_mode) for _ in range(config.n_resblocks)
        )
        stage = ShuffleStage if config.upscale_mode == "shuffle" else ResizeStage
        self.upscale = nn.Sequential(
            *(stage(fw, s, config.conv_mode) for s in _upscale_factors(config.scale, config.single_stage_upscale))
        )
        self.decoder = nn.ConvTranspose3d(fw, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.config.bands:
            raise ModelShapeError(f"generator expects {self.config.bands} bands, got {x.shape[1]}")
        feat = self.head(x.unsqueeze(1))
        body = feat
        for block in self.resblocks:
            body = block(body)
        # длинный skip поверх цепочки ResBlock
        up = self.upscale(body + feat)
        out = self.decoder(up).squeeze(1)
        if self.config.global_skip:
            out = out + bicubic_upsample_tensor(x, self.config.scale)
        return out


# ---------- discriminator ----------

@dataclass(frozen=True)
class DiscriminatorTaps:
    score: torch.Tensor        # (N,), без ограничивающей активации если sigmoid=False
    feat_mu: torch.Tensor      # (N, C0, P, P) до первого Maxpool-блока
    feat_phi: torch.Tensor     # (N, C, p, p) после последнего блока, до активации
    penultimate: torch.Tensor  # (N, C·p·p) после активации последнего блока
    raw_score: torch.Tensor    # (N,) логит до sigmoid (совпадает со score без sigmoid)


def critic_block_plan(config: DiscriminatorConfig) -> list[tuple[int, int, int]]:
    """(in_channels, out_channels, stride) по блокам: stride 2 на чётных, каналы удваиваются на нечётных."""
    plan: list[tuple[int, int, int]] = []
    ch = config.mu_width
    for i in range(1, config.n_maxpool_blocks + 1):
        out = min(config.base_channels * 2 ** ((i - 1) // 2), MAX_CRITIC_CHANNELS)
        plan.append((ch, out, 2 if i % 2 == 0 else 1))
        ch = out
    return plan


class MaxpoolBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, momentum: float, eps: float) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)
        # keras momentum 0.9 == torch momentum 0.1
        self.bn = nn.BatchNorm2d(out_ch, eps=eps, momentum=1.0 - momentum)

    def pre_activation(self, x: torch.Tensor) -> torch.Tensor:
        return self.bn(self.conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.pre_activation(x))


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig) -> None:
        super().__init__()
        self.config = config
        self.head = nn.Conv2d(config.bands, config.mu_width, kernel_size=3, padding=1)
        plan = critic_block_plan(config)
        self.blocks = nn.ModuleList(
            MaxpoolBlock(i, o, s, config.bn_momentum, config.bn_eps) for i, o, s in plan
        )
        out_ch = plan[-1][1]
        side = config.patch_size // 2 ** (config.n_maxpool_blocks // 2)
        self.flat_features = out_ch * side * side
        self.dense1 = nn.Linear(self.flat_features, config.dense_width)
        self.dense2 = nn.Linear(config.dense_width, 1)

    def taps(self, x: torch.Tensor) -> DiscriminatorTaps:
        cfg = self.config
        if x.shape[1] != cfg.bands or x.shape[2] != cfg.patch_size or x.shape[3] != cfg.patch_size:
            raise ModelShapeError(
                f"critic expects (N, {cfg.bands}, {cfg.patch_size}, {cfg.patch_size}), got {tuple(x.shape)}"
            )
        feat_mu = self.head(x)
        h = F.leaky_relu(feat_mu, 0.2)
        for block in self.blocks[:-1]:
            h = block(h)
        feat_phi = self.blocks[-1].pre_activation(h)
        penultimate = torch.flatten(F.relu(feat_phi), 1)
        raw = self.dense2(F.leaky_relu(self.dense1(penultimate), 0.2)).squeeze(1)
        score = torch.sigmoid(raw) if cfg.sigmoid else raw
        return DiscriminatorTaps(
            score=score, feat_mu=feat_mu, feat_phi=feat_phi, penultimate=penultimate, raw_score=raw,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.taps(x).score


# ---------- latent encoder ----------

class LatentEncoder(nn.Module):
    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        prev = config.bands
        depth = config.channel_schedule[0]
        for ch in config.channel_schedule:
            stride = 2 if ch == 2 * depth else 1
            layers += [nn.Conv2d(prev, ch, kernel_size=3, stride=stride, padding=1), nn.LeakyReLU(0.2)]
            prev, depth = ch, ch
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.dense1 = nn.Linear(prev * 16, config.dense_width)
        self.dense2 = nn.Linear(config.dense_width, config.latent_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.shape[1] != cfg.bands or x.shape[2] != cfg.patch_size or x.shape[3] != cfg.patch_size:
            raise ModelShapeError(
                f"encoder expects (N, {cfg.bands}, {cfg.patch_size}, {cfg.patch_size}), got {tuple(x.shape)}"
            )
        h = torch.flatten(self.pool(self.features(x)), 1)
        return self.dense2(F.leaky_relu(self.dense1(h), 0.2))


# ---------- weights container ----------

_KINDS = {GeneratorConfig: "generator", DiscriminatorConfig: "discriminator", EncoderConfig: "encoder"}


@dataclass
class NetworkWeights:
    config: NetConfig
    module: nn.Module
    init_seed: int

    @property
    def kind(self) -> str:
        return _KINDS[type(self.config)]

    @property
    def tensors(self) -> dict[str, torch.Tensor]:
        return dict(self.module.state_dict())

    @property
    def descriptor(self) -> str:
        fields = ", ".join(f"{k}={v}" for k, v in self.config.model_dump().items())
        return f"{self.kind}({fields})"

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.tensors.values() if t.is_floating_point())


def _fan_in(module: nn.Module) -> int:
    w = module.weight
    receptive = int(np.prod(w.shape[2:])) if w.ndim > 2 else 1
    if isinstance(module, (nn.ConvTranspose2d, nn.ConvTranspose3d)):
        return int(w.shape[0]) * receptive
    return int(w.shape[1]) * receptive


def build_module(config: NetConfig) -> nn.Module:
    if isinstance(config, GeneratorConfig):
        return Generator(config)
    if isinstance(config, DiscriminatorConfig):
        return Discriminator(config)
    if isinstance(config, EncoderConfig):
        return LatentEncoder(config)
    raise TypeError(f"unsupported network config: {type(config).__name__}")


def init_weights(config: NetConfig, seed: int) -> NetworkWeights:
    """
    Детерминированная инициализация: гауссово распределение с дисперсией 2/fan_in
    (He), нулевые bias, ScaleLayer = residual_scale. Глобальный RNG torch не трогаем.
    """
    module = build_module(config)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.ConvTranspose2d, nn.ConvTranspose3d, nn.Linear)):
                std = math.sqrt(2.0 / _fan_in(m))
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.reset_parameters()
                m.reset_running_stats()
        if isinstance(module, Generator) and config.global_skip:
            # старт около bicubic: декодер почти выключен
            module.decoder.weight.mul_(0.1)
    module.eval()
    weights = NetworkWeights(config=config, module=module, init_seed=int(seed))
    logger.debug("init %s: %s params, seed=%s", weights.kind, weights.n_parameters(), seed)
    return weights


# ---------- forward functions ----------

def generator_forward(w: NetworkWeights, lr: CubeBatch) -> torch.Tensor:
    return w.module(_as_batch(lr, w.module))


def resblock_forward(w: NetworkWeights | ResBlock, x: torch.Tensor, index: int = 0) -> torch.Tensor:
    block = w.module.resblocks[index] if isinstance(w, NetworkWeights) else w
    if x.ndim != 5 or x.shape[1] != block.channels:
        raise ModelShapeError(f"resblock expects (N, {block.channels}, b, h, w), got {tuple(x.shape)}")
    return block(x)


def discriminator_forward(w: NetworkWeights, patch: CubeBatch) -> DiscriminatorTaps:
    return w.module.taps(_as_batch(patch, w.module))


def encoder_forward(w: NetworkWeights, patch: CubeBatch) -> torch.Tensor:
    return w.module(_as_batch(patch, w.module))


def super_resolve(w: NetworkWeights, lr: Sequence[HSICube], batch_size: int = 8) -> list[HSICube]:
    """G в режиме eval по списку кубов, выход клипуется в [0, 255]."""
    was_training = w.module.training
    w.module.eval()
    out: list[HSICube] = []
    try:
        with torch.no_grad():
            for i in range(0, len(lr), batch_size):
                chunk = list(lr[i:i + batch_size])
                sr = generator_forward(w, chunk)
                out.extend(tensor_to_cubes(sr, chunk[0].wavelengths))
    finally:
        w.module.train(was_training)
    return out
