"""
Метрики качества SR: PSNR, SSIM, SAM, SRE, PI (полноссылочные/без ссылки)
и IS / FID для разнообразия. Все считаются в float64 на шкале [0, 255].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import rel_entr
from sklearn.cluster import KMeans
from sklearn.linear_model import LogisticRegression

from config import IS_CLUSTERS, RADIANCE_MAX
from services.hsi_data import HSICube
from services.niqe import NIQEModel, niqe_score

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SAM_SKIP_WARN = 0.01
FID_RIDGE = 1e-6


class MetricInputError(ValueError):
    """Входы метрики несовместимы"""
    pass


def _arrays(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = hr.data if isinstance(hr, HSICube) else np.asarray(hr)
    b = sr.data if isinstance(sr, HSICube) else np.asarray(sr)
    if a.shape != b.shape:
        raise MetricInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise MetricInputError(f"expected (bands, height, width), got ndim={a.ndim}")
    return a.astype(np.float64), b.astype(np.float64)


# ---------- fidelity ----------

def psnr(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> float:
    """10·log10(255² / MSE); MSE == 0 -> math.inf."""
    a, b = _arrays(hr, sr)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(RADIANCE_MAX ** 2 / mse)


def per_band_psnr(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> list[float]:
    a, b = _arrays(hr, sr)
    out = []
    for mse in np.mean((a - b) ** 2, axis=(1, 2)):
        out.append(math.inf if mse == 0.0 else 10.0 * math.log10(RADIANCE_MAX ** 2 / float(mse)))
    return out


def _ssim_band(x: np.ndarray, y: np.ndarray) -> float:
    c1 = (0.01 * RADIANCE_MAX) ** 2
    c2 = (0.03 * RADIANCE_MAX) ** 2

    def filt(img: np.ndarray) -> np.ndarray:
        return gaussian_filter(img, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    ux, uy = filt(x), filt(y)
    uxx, uyy, uxy = filt(x * x), filt(y * y), filt(x * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy

    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux ** 2 + uy ** 2 + c1
    b2 = vx + vy + c2
    s = (a1 * a2) / (b1 * b2)

    pad = (SSIM_WINDOW - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> float:
    """Гауссово окно 11 (σ 1.5), C1=(0.01·255)², C2=(0.03·255)², среднее по каналам."""
    a, b = _arrays(hr, sr)
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise MetricInputError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[1:]}")
    return float(np.mean([_ssim_band(a[i], b[i]) for i in range(a.shape[0])]))


@dataclass(frozen=True)
class SAMResult:
    degrees: float
    skipped: int
    n_pixels: int


def sam_details(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> SAMResult:
    a, b = _arrays(hr, sr)
    x = a.reshape(a.shape[0], -1).T
    y = b.reshape(b.shape[0], -1).T
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    valid = (nx > 0) & (ny > 0)
    skipped = int((~valid).sum())
    n = x.shape[0]

    if skipped and skipped / n > SAM_SKIP_WARN:
        logger.warning("SAM: skipped %s of %s zero-norm spectra", skipped, n)
    if not valid.any():
        raise MetricInputError("SAM: every spectrum has zero norm")

    xu = x[valid] / nx[valid, None]
    yu = y[valid] / ny[valid, None]
    # устойчивая форма arccos(<x, y>)
    ang = 2.0 * np.arctan2(np.linalg.norm(xu - yu, axis=1), np.linalg.norm(xu + yu, axis=1))
    return SAMResult(degrees=float(np.degrees(ang.mean())), skipped=skipped, n_pixels=n)


def sam(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> float:
    return sam_details(hr, sr).degrees


def per_band_sre(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> list[float]:
    a, b = _arrays(hr, sr)
    return [float(math.sqrt(m)) for m in np.mean((a - b) ** 2, axis=(1, 2))]


def sre(hr: HSICube | np.ndarray, sr: HSICube | np.ndarray) -> float:
    """sqrt( (1/n_b) · Σ_i MSE(band i) )."""
    a, b = _arrays(hr, sr)
    return float(math.sqrt(np.mean(np.mean((a - b) ** 2, axis=(1, 2)))))


# ---------- perceptual index ----------

class MAScorer(Protocol):
    def score(self, cube: HSICube) -> float: ...


@dataclass(frozen=True)
class ConstantMAScorer:
    """Заглушка вместо обученного MA: постоянное значение (PI сравним только относительно)."""
    value: float = 5.0

    def score(self, cube: HSICube) -> float:
        return self.value


def pi(
    hr: HSICube | np.ndarray,
    sr: HSICube | np.ndarray,
    ma_scorer: MAScorer | None = None,
    niqe_model: NIQEModel | None = None,
) -> float:
    _arrays(hr, sr)
    scorer = ma_scorer or ConstantMAScorer()
    niqe_value = niqe_score(niqe_model, sr)
    cube = sr if isinstance(sr, HSICube) else HSICube(data=sr, wavelengths=tuple(range(sr.shape[0])))
    return 0.5 * ((10.0 - scorer.score(cube)) + niqe_value)


# ---------- diversity ----------

class ProbabilisticClassifier(Protocol):
    def predict_proba(self, samples: np.ndarray) -> np.ndarray: ...


def inception_score_from_probs(probs: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise MetricInputError("inception score needs a non-empty (n, C) probability matrix")
    marginal = p.mean(axis=0, keepdims=True)
    kl = rel_entr(p, marginal).sum(axis=1)
    return float(np.exp(kl.mean()))


def inception_score(samples: np.ndarray, classifier: ProbabilisticClassifier) -> float:
    if len(samples) == 0:
        raise MetricInputError("inception score of an empty batch")
    return inception_score_from_probs(classifier.predict_proba(np.asarray(samples)))


@dataclass(frozen=True)
class FIDResult:
    value: float
    regularized: bool


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _trace_sqrt_product(c1: np.ndarray, c2: np.ndarray) -> float:
    # Tr((C1 C2)^{1/2}) == Tr((S C2 S)^{1/2}), S = C1^{1/2}; S C2 S симметрична
    s = _psd_sqrt(c1)
    inner = s @ c2 @ s
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fid_details(feats_real: np.ndarray, feats_gen: np.ndarray) -> FIDResult:
    x = np.asarray(feats_real, dtype=np.float64)
    y = np.asarray(feats_gen, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise MetricInputError(f"FID feature dimension mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise MetricInputError("FID needs at least 2 samples per side")

    mu1, mu2 = x.mean(axis=0), y.mean(axis=0)
    c1 = np.atleast_2d(np.cov(x, rowvar=False))
    c2 = np.atleast_2d(np.cov(y, rowvar=False))

    regularized = False
    tr_sqrt = _trace_sqrt_product(c1, c2)
    if not math.isfinite(tr_sqrt):
        ridge = FID_RIDGE * np.eye(c1.shape[0])
        c1, c2 = c1 + ridge, c2 + ridge
        tr_sqrt = _trace_sqrt_product(c1, c2)
        regularized = True
        logger.warning("FID: non-finite matrix root, regularized with %s*I", FID_RIDGE)

    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * tr_sqrt)
    return FIDResult(value=max(value, 0.0), regularized=regularized)


def fid(feats_real: np.ndarray, feats_gen: np.ndarray) -> float:
    return fid_details(feats_real, feats_gen).value


class SurrogateClassifier:
    """
    Замена inception-сети: KMeans размечает HR-признаки критика на K групп,
    логистическая регрессия даёт softmax по этим группам.
    """

    def __init__(self, n_classes: int = IS_CLUSTERS, seed: int = 0) -> None:
        self.n_classes = n_classes
        self.seed = seed
        self._head: LogisticRegression | None = None
        self._constant: int | None = None

    def fit(self, features: np.ndarray) -> "SurrogateClassifier":
        x = np.asarray(features, dtype=np.float64)
        k = max(1, min(self.n_classes, x.shape[0]))
        labels = KMeans(n_clusters=k, random_state=self.seed, n_init=10).fit_predict(x)
        if len(np.unique(labels)) < 2:
            self._constant = int(labels[0])
            self._head = None
        else:
            self._head = LogisticRegression(max_iter=1000).fit(x, labels)
            self._constant = None
        return self

    def predict_proba(self, samples: np.ndarray) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        out = np.zeros((x.shape[0], self.n_classes))
        if self._head is None and self._constant is None:
            raise MetricInputError("surrogate classifier is not fitted")
        if self._head is None:
            out[:, self._constant] = 1.0
            return out
        out[:, self._head.classes_] = self._head.predict_proba(x)
        return out


# ---------- reports ----------

@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    pi: float
    sam: float
    sre: float
    per_band_psnr: list[float] = field(default_factory=list)
    per_band_sre: list[float] = field(default_factory=list)
    sam_skipped: int = 0
    n_cubes: int = 1

    @property
    def psnr_infinite(self) -> bool:
        return math.isinf(self.psnr)


@dataclass(frozen=True)
class DiversityReport:
    is_score: float
    fid: float
    n_samples: int
    feature_layer: str = "critic_last_maxpool"
    fid_regularized: bool = False


def metric_report(
    hr: Sequence[HSICube],
    sr: Sequence[HSICube],
    niqe_model: NIQEModel | None = None,
    ma_scorer: MAScorer | None = None,
) -> MetricReport:
    """
    Средние по кубам метрики. PSNR бесконечен, если бесконечен у любого куба.
    PI без обученной NIQE-модели не считается (NaN).
    """
    if len(hr) != len(sr) or not hr:
        raise MetricInputError(f"need equal, non-empty cube lists, got {len(hr)} / {len(sr)}")

    psnrs = [psnr(h, s) for h, s in zip(hr, sr)]
    ssims = [ssim(h, s) for h, s in zip(hr, sr)]
    sams = [sam_details(h, s) for h, s in zip(hr, sr)]
    sres = [sre(h, s) for h, s in zip(hr, sr)]
    if niqe_model is not None:
        pis = [pi(h, s, ma_scorer, niqe_model) for h, s in zip(hr, sr)]
        pi_value = float(np.mean(pis))
    else:
        pi_value = math.nan

    band_psnr = np.array([per_band_psnr(h, s) for h, s in zip(hr, sr)])
    band_sre = np.array([per_band_sre(h, s) for h, s in zip(hr, sr)])

    return MetricReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        pi=pi_value,
        sam=float(np.mean([r.degrees for r in sams])),
        sre=float(np.mean(sres)),
        per_band_psnr=[float(v) for v in band_psnr.mean(axis=0)],
        per_band_sre=[float(v) for v in band_sre.mean(axis=0)],
        sam_skipped=sum(r.skipped for r in sams),
        n_cubes=len(hr),
    )
