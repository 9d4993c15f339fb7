"""Картинки только в файлы (backend Agg)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from services.diagnostics import CollapseDiagnostics  # noqa: E402
from services.legan_losses import ModeSpectrum  # noqa: E402


def plot_curve(frames: dict[str, pd.DataFrame], column: str, path: str | Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, frame in frames.items():
        series = frame[["iter", column]].dropna()
        ax.plot(series["iter"], series[column], marker="o" if len(series) < 40 else None, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel(column)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(frames) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_density(diag: CollapseDiagnostics, path: str | Path) -> Path:
    centers = 0.5 * (diag.bin_edges[:-1] + diag.bin_edges[1:])
    width = float(np.diff(diag.bin_edges).mean())
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, diag.density_real, width=width, alpha=0.5, label="D(HR)")
    ax.bar(centers, diag.density_gen, width=width, alpha=0.5, label="D(SR)")
    ax.set_xlabel("critic score")
    ax.set_ylabel("density")
    ax.set_title(f"critic score densities, overlap = {diag.overlap:.4f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_mode_spectrum(spectrum: ModeSpectrum, path: str | Path, top: int = 32) -> Path:
    values = spectrum.values[:top]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(1, len(values) + 1), values)
    ax.set_xlabel("singular value index")
    ax.set_ylabel("singular value")
    ax.set_title(f"feature mode spectrum, s1 share = {spectrum.concentration:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(path)
