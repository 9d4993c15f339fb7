"""
Функции потерь LE-GAN: спектральная контекстная, пространственная текстурная,
Wasserstein (критик / генератор), латентная регуляризация, композит SSRP,
JS-пара для сравнения и SVD-спектр мод.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import torch
import torch.nn.functional as F

from services.train_config import LossWeights

logger = logging.getLogger(__name__)

CONTEXT_EPS = 1e-5
SpectralMode = Literal["template", "literal"]


class LossInputError(ValueError):
    """Некорректные входы функции потерь"""
    pass


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise LossInputError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _non_empty(x: torch.Tensor, what: str) -> None:
    if x.numel() == 0:
        raise LossInputError(f"{what}: empty score batch")


# ---------- spectral contextual ----------

def pool_to_budget(x: torch.Tensor, max_positions: int | None) -> torch.Tensor:
    """avg-pool по степеням двойки, пока позиций больше max_positions."""
    if not max_positions:
        return x
    while x.shape[-2] * x.shape[-1] > max_positions and min(x.shape[-2:]) >= 2:
        x = F.avg_pool2d(x, 2)
    return x


def contextual_affinity(c: torch.Tensor, n_bands: float) -> torch.Tensor:
    """
    c: (N, I, J). b_ij = c_ij / (min_k c_ik + eps); A_ij = softmax_j((1 - b_ij) / n_b).
    """
    b = c / (c.min(dim=-1, keepdim=True).values + CONTEXT_EPS)
    return torch.softmax((1.0 - b) / n_bands, dim=-1)


def contextual_from_matrix(c: torch.Tensor, n_bands: float) -> torch.Tensor:
    a = contextual_affinity(c, n_bands)
    # по каждому j берём лучший i, среднее по j, -log; затем среднее по батчу
    per_sample = -torch.log(a.max(dim=-2).values.mean(dim=-1))
    return per_sample.mean()


def cosine_distance_matrix(feat_sr: torch.Tensor, feat_hr: torch.Tensor) -> torch.Tensor:
    """(N, C, H, W) x2 -> (N, P, P) с 1 - cos между векторами позиций."""
    x = F.normalize(feat_sr.flatten(2), dim=1)
    y = F.normalize(feat_hr.flatten(2), dim=1)
    return (1.0 - torch.einsum("ncp,ncq->npq", x, y)).clamp_min(0.0)


def literal_cosine_map(
    feat_sr: torch.Tensor,
    feat_hr: torch.Tensor,
    lr_up: torch.Tensor,
    hr: torch.Tensor,
) -> torch.Tensor:
    """Попиксельный косинус между (D_mu(sr) - D_mu(hr)) и (lr_up - hr): (N, H, W)."""
    _same_shape(lr_up, hr, "literal lr_up/hr")
    if feat_sr.shape[1] != hr.shape[1] or feat_sr.shape[2:] != hr.shape[2:]:
        raise LossInputError(
            f"literal needs D_mu maps shaped like the cube: {tuple(feat_sr.shape)} vs {tuple(hr.shape)}"
        )
    u = feat_sr - feat_hr
    v = lr_up - hr
    dot = (u * v).sum(dim=1)
    return dot / (u.norm(dim=1) * v.norm(dim=1) + 1e-12)


def spectral_contextual_loss(
    feat_sr: torch.Tensor,
    feat_hr: torch.Tensor,
    mode: SpectralMode = "template",
    lr_up: torch.Tensor | None = None,
    hr: torch.Tensor | None = None,
    n_bands: float | None = None,
    max_positions: int | None = None,
) -> torch.Tensor:
    """
    Спектральная контекстная потеря по картам D_mu.

    template: c_ij = 1 - cos(позиция i карты SR, позиция j карты HR), т.е. косинусное
    расстояние; нормировка по минимуму строки имеет смысл только для неотрицательной
    несхожести. literal: c это попиксельная карта косинусов в формате (строка, столбец),
    нужен bicubic-апсемпл LR (`lr_up`) и `hr`, число каналов D_mu == числу каналов куба.

    n_bands: «температура» n_b; по умолчанию число каналов карт.
    """
    _same_shape(feat_sr, feat_hr, "spectral_contextual_loss")
    if feat_sr.ndim != 4:
        raise LossInputError(f"expected (N, C, H, W) maps, got {tuple(feat_sr.shape)}")
    n_b = float(n_bands) if n_bands is not None else float(feat_sr.shape[1])

    if mode == "template":
        fs = pool_to_budget(feat_sr, max_positions)
        fh = pool_to_budget(feat_hr, max_positions)
        return contextual_from_matrix(cosine_distance_matrix(fs, fh), n_b)

    if mode == "literal":
        if lr_up is None or hr is None:
            raise LossInputError("literal mode needs lr_up and hr")
        return contextual_from_matrix(literal_cosine_map(feat_sr, feat_hr, lr_up, hr), n_b)

    raise LossInputError(f"unknown spectral mode {mode!r}")


# ---------- spatial / adversarial / latent ----------

def spatial_texture_loss(featphi_sr: torch.Tensor, featphi_hr: torch.Tensor) -> torch.Tensor:
    _same_shape(featphi_sr, featphi_hr, "spatial_texture_loss")
    return (featphi_sr - featphi_hr).norm(dim=1).mean()


def critic_loss(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    _non_empty(scores_real, "critic_loss real")
    _non_empty(scores_fake, "critic_loss fake")
    return -(scores_real.mean() - scores_fake.mean())


def generator_adversarial_loss(scores_fake: torch.Tensor) -> torch.Tensor:
    _non_empty(scores_fake, "generator_adversarial_loss")
    return -scores_fake.mean()


def latent_reg_loss(latent_hr: torch.Tensor, latent_sr: torch.Tensor) -> torch.Tensor:
    _same_shape(latent_hr, latent_sr, "latent_reg_loss")
    if latent_hr.ndim == 1:
        return (latent_hr - latent_sr).norm()
    return (latent_hr - latent_sr).norm(dim=1).mean()


def content_mse_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    """Пиксельный MSE в сетевых единицах (= MSE / 255²)."""
    _same_shape(sr, hr, "content_mse_loss")
    return F.mse_loss(sr, hr)


def js_gan_losses(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Кросс-энтропия по логитам (sigmoid внутри):
    d_loss = -log D(real) - log(1 - D(fake)), g_loss = -log D(fake).
    """
    _non_empty(scores_real, "js real")
    _non_empty(scores_fake, "js fake")
    d_loss = (
        F.binary_cross_entropy_with_logits(scores_real, torch.ones_like(scores_real))
        + F.binary_cross_entropy_with_logits(scores_fake, torch.zeros_like(scores_fake))
    )
    g_loss = F.binary_cross_entropy_with_logits(scores_fake, torch.ones_like(scores_fake))
    return d_loss, g_loss


def gradient_penalty(
    critic: Callable[[torch.Tensor], torch.Tensor],
    real: torch.Tensor,
    fake: torch.Tensor,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """((‖∇ D(x̂)‖₂ - 1)²) на случайных интерполяциях real/fake."""
    _same_shape(real, fake, "gradient_penalty")
    eps = torch.rand((real.shape[0],) + (1,) * (real.ndim - 1), generator=generator).to(real)
    interp = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(True)
    d_interp = critic(interp)
    grads = torch.autograd.grad(
        outputs=d_interp, inputs=interp,
        grad_outputs=torch.ones_like(d_interp),
        create_graph=True, retain_graph=True,
    )[0]
    grads = grads.reshape(grads.shape[0], -1)
    return ((grads.norm(2, dim=1) - 1.0) ** 2).mean()


# ---------- SSRP composite ----------

@dataclass(frozen=True)
class LossComponents:
    spectral: torch.Tensor
    spatial: torch.Tensor
    adversarial: torch.Tensor
    latent: torch.Tensor
    content: torch.Tensor | None = None


@dataclass(frozen=True)
class LossBreakdown:
    spectral: float
    spatial: float
    adversarial: float
    latent: float
    total: float
    content: float = 0.0
    # дифференцируемая версия total для backward
    objective: torch.Tensor | None = field(default=None, compare=False, repr=False)

    def as_row(self) -> dict[str, float]:
        return {
            "spectral": self.spectral,
            "spatial": self.spatial,
            "adversarial": self.adversarial,
            "latent": self.latent,
            "total": self.total,
            "content": self.content,
        }


def weighted_total(
    spectral: float, spatial: float, adversarial: float, latent: float,
    weights: LossWeights, content: float = 0.0,
) -> float:
    return (
        weights.lambda_spectral * spectral
        + weights.eta_spatial * spatial
        + weights.sigma_adversarial * adversarial
        + weights.mu_latent * latent
        + weights.nu_content * content
    )


def ssrp_loss(components: LossComponents, weights: LossWeights) -> LossBreakdown:
    zero = torch.zeros((), dtype=components.spectral.dtype, device=components.spectral.device)
    content_t = components.content if components.content is not None else zero

    objective = (
        weights.lambda_spectral * components.spectral
        + weights.eta_spatial * components.spatial
        + weights.sigma_adversarial * components.adversarial
        + weights.mu_latent * components.latent
        + weights.nu_content * content_t
    )
    values = {
        "spectral": float(components.spectral.detach()),
        "spatial": float(components.spatial.detach()),
        "adversarial": float(components.adversarial.detach()),
        "latent": float(components.latent.detach()),
        "content": float(content_t.detach()),
    }
    total = weighted_total(weights=weights, **values)
    return LossBreakdown(total=total, objective=objective, **values)


# ---------- SVD mode spectrum ----------

@dataclass(frozen=True)
class ModeSpectrum:
    values: np.ndarray       # сингулярные числа по убыванию
    degenerate: bool         # вход целиком нулевой
    concentration: float     # s_1 / sum(s)


def svd_mode_spectrum(features: torch.Tensor | np.ndarray) -> ModeSpectrum:
    """
    (N, C, H, W) -> матрица (N·H·W, C); 2-D вход берётся как есть (позиции x каналы).
    """
    arr = features.detach().cpu().numpy() if isinstance(features, torch.Tensor) else np.asarray(features)
    arr = arr.astype(np.float64)
    if arr.ndim == 4:
        arr = arr.transpose(0, 2, 3, 1).reshape(-1, arr.shape[1])
    elif arr.ndim != 2:
        raise LossInputError(f"svd_mode_spectrum expects 2-D or (N, C, H, W), got ndim={arr.ndim}")

    if not np.any(arr):
        logger.warning("svd_mode_spectrum: all-zero features, spectrum is degenerate")
        return ModeSpectrum(values=np.zeros(min(arr.shape)), degenerate=True, concentration=0.0)

    s = np.linalg.svd(arr, compute_uv=False)
    return ModeSpectrum(values=s, degenerate=False, concentration=float(s[0] / s.sum()))
