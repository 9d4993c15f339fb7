"""
Диагностика mode collapse: плотности оценок критика на HR и SR,
коэффициент Бхаттачарии, кривые IS/FID, SVD-спектр признаков, устойчивость кривых.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from config import DENSITY_BINS, MIN_DIAG_BATCH, STABILITY_WINDOW
from services.hsi_data import format_header_text
from services.legan_losses import ModeSpectrum, svd_mode_spectrum
from services.trainer import TrainData, TrainState, generate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CollapseDiagnostics:
    bin_edges: np.ndarray
    density_real: np.ndarray   # сумма == 1
    density_gen: np.ndarray    # сумма == 1
    overlap: float             # коэффициент Бхаттачарии, [0, 1]
    n_real: int
    n_gen: int
    small_batch: bool = False
    is_curve: list[tuple[int, float]] = field(default_factory=list)
    fid_curve: list[tuple[int, float]] = field(default_factory=list)


def score_histograms(
    scores_real: np.ndarray,
    scores_gen: np.ndarray,
    bins: int = DENSITY_BINS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Гистограммы на общем диапазоне, нормированные на 1."""
    real = np.asarray(scores_real, dtype=np.float64).ravel()
    gen = np.asarray(scores_gen, dtype=np.float64).ravel()
    if real.size == 0 or gen.size == 0:
        raise ValueError("score histograms need non-empty batches")
    lo = float(min(real.min(), gen.min()))
    hi = float(max(real.max(), gen.max()))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    p, _ = np.histogram(real, bins=edges)
    q, _ = np.histogram(gen, bins=edges)
    return edges, p / p.sum(), q / q.sum()


def bhattacharyya(p: np.ndarray, q: np.ndarray) -> float:
    value = float(np.sum(np.sqrt(np.asarray(p, dtype=np.float64) * np.asarray(q, dtype=np.float64))))
    return min(max(value, 0.0), 1.0)


def diagnostics_from_scores(
    scores_real: np.ndarray,
    scores_gen: np.ndarray,
    bins: int = DENSITY_BINS,
) -> CollapseDiagnostics:
    edges, p, q = score_histograms(scores_real, scores_gen, bins)
    n_real, n_gen = int(np.size(scores_real)), int(np.size(scores_gen))
    small = min(n_real, n_gen) < MIN_DIAG_BATCH
    if small:
        logger.warning("collapse diagnostics on a small batch (%s real / %s generated < %s)",
                       n_real, n_gen, MIN_DIAG_BATCH)
    return CollapseDiagnostics(
        bin_edges=edges, density_real=p, density_gen=q, overlap=bhattacharyya(p, q),
        n_real=n_real, n_gen=n_gen, small_batch=small,
    )


def critic_scores(state: TrainState, x: torch.Tensor, batch_size: int = 16) -> np.ndarray:
    d = state.critic.module
    was_training = d.training
    d.eval()
    try:
        with torch.no_grad():
            out = [d(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)]
    finally:
        d.train(was_training)
    return torch.cat(out).double().numpy()


def collapse_diagnostics(state: TrainState, data: TrainData, bins: int = DENSITY_BINS) -> CollapseDiagnostics:
    """Оценки критика на тестовых HR и на G(LR) того же набора + текущие кривые IS/FID."""
    real = critic_scores(state, data.test_hr)
    gen = critic_scores(state, generate(state, data.test_lr))
    diag = diagnostics_from_scores(real, gen, bins)
    is_curve = [(r.iter, r.is_score) for r in state.curves if not math.isnan(r.is_score)]
    fid_curve = [(r.iter, r.fid) for r in state.curves if not math.isnan(r.fid)]
    return CollapseDiagnostics(
        bin_edges=diag.bin_edges, density_real=diag.density_real, density_gen=diag.density_gen,
        overlap=diag.overlap, n_real=diag.n_real, n_gen=diag.n_gen, small_batch=diag.small_batch,
        is_curve=is_curve, fid_curve=fid_curve,
    )


def generated_mode_spectrum(state: TrainState, data: TrainData, n: int = 16) -> ModeSpectrum:
    """SVD-спектр признаков критика (после последнего блока) на сгенерированных патчах."""
    sr = generate(state, data.test_lr[:n])
    d = state.critic.module
    was_training = d.training
    d.eval()
    try:
        with torch.no_grad():
            feats = d.taps(sr).feat_phi
    finally:
        d.train(was_training)
    return svd_mode_spectrum(feats)


def rolling_variance(values: pd.Series | np.ndarray, window: int = STABILITY_WINDOW) -> float:
    """Средняя скользящая дисперсия кривой потерь (меньше = стабильнее)."""
    series = pd.Series(np.asarray(values, dtype=np.float64)).dropna()
    if len(series) < 2:
        return math.nan
    return float(series.rolling(window=min(window, len(series)), min_periods=2).var().mean())


def relative_rolling_variance(values: pd.Series | np.ndarray, window: int = STABILITY_WINDOW) -> float:
    """
    rolling_variance, делённая на mean(|x|)^2: квадрат коэффициента вариации.
    Не зависит от масштаба кривой, поэтому годится для сравнения WGAN- и JS-потерь.
    """
    series = pd.Series(np.asarray(values, dtype=np.float64)).dropna()
    scale = float(series.abs().mean()) if len(series) else 0.0
    if scale == 0.0:
        return math.nan
    return rolling_variance(series, window) / scale**2


# ---------- tables ----------

def density_frame(diag: CollapseDiagnostics) -> pd.DataFrame:
    return pd.DataFrame({
        "bin_left": diag.bin_edges[:-1],
        "bin_right": diag.bin_edges[1:],
        "density_real": diag.density_real,
        "density_gen": diag.density_gen,
    })


def write_diagnostics(diag: CollapseDiagnostics, spectrum: ModeSpectrum | None, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    density_path = out / "density.csv"
    density_frame(diag).to_csv(density_path, index=False)
    written.append(density_path)

    curves_path = out / "is_fid.csv"
    is_map = dict(diag.is_curve)
    fid_map = dict(diag.fid_curve)
    iters = sorted(set(is_map) | set(fid_map))
    pd.DataFrame({
        "iter": iters,
        "is": [is_map.get(i, math.nan) for i in iters],
        "fid": [fid_map.get(i, math.nan) for i in iters],
    }).to_csv(curves_path, index=False)
    written.append(curves_path)

    summary = {
        "overlap": repr(diag.overlap),
        "n_real": diag.n_real,
        "n_gen": diag.n_gen,
        "small_batch": "true" if diag.small_batch else "false",
    }
    if spectrum is not None:
        spectrum_path = out / "mode_spectrum.csv"
        pd.DataFrame({"index": np.arange(1, len(spectrum.values) + 1),
                      "singular_value": spectrum.values}).to_csv(spectrum_path, index=False)
        written.append(spectrum_path)
        summary["svd_concentration"] = repr(spectrum.concentration)
        summary["svd_degenerate"] = "true" if spectrum.degenerate else "false"

    summary_path = out / "summary.txt"
    summary_path.write_text(format_header_text(summary), encoding="utf-8")
    written.append(summary_path)
    return written
