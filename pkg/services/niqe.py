"""
NIQE для радиационных кубов: признаки MSCN/AGGD по блокам на двух масштабах,
многомерная гауссиана по "чистым" HR-патчам, расстояние Махаланобиса с pinv.

Модель обучается здесь же (fit_niqe), готовой модели natural-image не используем.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import gamma
from skimage.transform import rescale
from skimage.util import view_as_blocks

from services.hsi_data import HSICube

logger = logging.getLogger(__name__)

DEFAULT_BLOCK = 16
N_FEATURES = 36

_GAM = np.linspace(0.2, 10.0, num=9801, endpoint=True)
_R_GAM = gamma(2.0 / _GAM) ** 2 / (gamma(1.0 / _GAM) * gamma(3.0 / _GAM))


class NIQENotFittedError(RuntimeError):
    """NIQE-модель не обучена или обучена на пустом наборе"""
    pass


def estimate_aggd_params(vec: np.ndarray) -> tuple[float, float, float]:
    """Асимметричное обобщённое гауссово: (alpha, beta_left, beta_right)."""
    vec = vec.ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        left = vec[vec < 0]
        right = vec[vec > 0]
        leftstd = np.sqrt(np.mean(left ** 2)) if left.size else 0.0
        rightstd = np.sqrt(np.mean(right ** 2)) if right.size else 0.0
        gammahat = leftstd / rightstd
        rhat = np.mean(np.abs(vec)) ** 2 / np.mean(vec ** 2)
        rhatnorm = (rhat * (gammahat ** 3 + 1) * (gammahat + 1)) / ((gammahat ** 2 + 1) ** 2)
    if not np.isfinite(rhatnorm):
        return 0.0, 0.0, 0.0
    alpha = float(_GAM[np.argmin((_R_GAM - rhatnorm) ** 2)])
    k = np.sqrt(gamma(1.0 / alpha) / gamma(3.0 / alpha))
    return alpha, float(leftstd * k), float(rightstd * k)


def block_features(block: np.ndarray) -> np.ndarray:
    feats: list[float] = []
    alpha, bl, br = estimate_aggd_params(block)
    feats.extend([alpha, (bl + br) / 2.0])
    for dx, dy in ((0, 1), (1, 0), (1, 1), (1, -1)):
        pair = block * np.roll(np.roll(block, dy, axis=0), dx, axis=1)
        alpha, bl, br = estimate_aggd_params(pair)
        eta = (br - bl) * (gamma(2.0 / alpha) / gamma(1.0 / alpha)) if alpha > 0 else 0.0
        feats.extend([alpha, eta, bl, br])
    return np.asarray(feats, dtype=np.float64)


def mscn(img: np.ndarray, sigma: float = 7.0 / 6.0) -> np.ndarray:
    mu = gaussian_filter(img, sigma, mode="nearest")
    var = np.abs(gaussian_filter(img * img, sigma, mode="nearest") - mu * mu)
    return (img - mu) / (np.sqrt(var) + 1.0)


def niqe_features(img: np.ndarray, block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """2-D изображение -> (n_blocks, 36): 18 признаков на масштабе 1 и 18 на 1/2."""
    img = np.asarray(img, dtype=np.float64)
    h = (img.shape[0] // block_size) * block_size
    w = (img.shape[1] // block_size) * block_size
    if h == 0 or w == 0:
        raise NIQENotFittedError(f"image {img.shape} smaller than NIQE block {block_size}")
    img = img[:h, :w]

    per_scale = []
    for scale in (1, 2):
        scaled = img if scale == 1 else rescale(
            img, 0.5, order=3, anti_aliasing=True, mode="reflect", preserve_range=True,
        )
        norm = mscn(scaled)
        bs = block_size // scale
        norm = norm[: (norm.shape[0] // bs) * bs, : (norm.shape[1] // bs) * bs]
        blocks = view_as_blocks(norm, block_shape=(bs, bs)).reshape(-1, bs, bs)
        per_scale.append(np.stack([block_features(b) for b in blocks]))

    n = min(len(f) for f in per_scale)
    return np.nan_to_num(np.hstack([f[:n] for f in per_scale]))


@dataclass(frozen=True)
class NIQEModel:
    mu: np.ndarray    # (36,)
    cov: np.ndarray   # (36, 36)
    block_size: int
    n_blocks: int


def _images(items: Iterable[HSICube | np.ndarray]) -> Iterable[np.ndarray]:
    for item in items:
        data = item.data if isinstance(item, HSICube) else np.asarray(item)
        if data.ndim == 2:
            yield data
        else:
            yield from data


def fit_niqe(pristine: Iterable[HSICube | np.ndarray], block_size: int = DEFAULT_BLOCK) -> NIQEModel:
    """Каждый канал каждого куба считается отдельным "чистым" изображением."""
    feats = [niqe_features(img, block_size) for img in _images(pristine)]
    if not feats:
        raise NIQENotFittedError("no pristine images to fit NIQE on")
    stacked = np.vstack(feats)
    if stacked.shape[0] < 2:
        raise NIQENotFittedError("NIQE needs at least 2 pristine blocks")
    model = NIQEModel(
        mu=stacked.mean(axis=0),
        cov=np.cov(stacked, rowvar=False),
        block_size=block_size,
        n_blocks=int(stacked.shape[0]),
    )
    logger.info("NIQE fitted on %s blocks (block %s)", model.n_blocks, block_size)
    return model


def niqe_image(model: NIQEModel | None, img: np.ndarray) -> float:
    if model is None:
        raise NIQENotFittedError("NIQE model is not fitted")
    feats = niqe_features(img, model.block_size)
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros_like(model.cov)
    diff = model.mu - mu
    inv = np.linalg.pinv((model.cov + cov) / 2.0)
    return float(np.sqrt(max(diff @ inv @ diff, 0.0)))


def niqe_score(model: NIQEModel | None, cube: HSICube | np.ndarray) -> float:
    """Средний по каналам NIQE."""
    images = list(_images([cube]))
    return float(np.mean([niqe_image(model, img) for img in images]))
