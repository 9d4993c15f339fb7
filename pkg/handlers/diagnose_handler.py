"""
diagnose: кривые IS/FID (+ total) по одной или нескольким run-директориям,
плотности оценок критика и SVD-спектр по последнему чекпоинту основного запуска.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import pandas as pd

from handlers.common import EXIT_OK, build_data, config_seeds, new_manifest
from services.diagnostics import collapse_diagnostics, generated_mode_spectrum, relative_rolling_variance, rolling_variance, write_diagnostics
from services.plots import plot_curve, plot_density, plot_mode_spectrum
from services.tensor_archive import CheckpointError
from services.trainer import curves_to_frame, latest_checkpoint, read_curves, restore_checkpoint

logger = logging.getLogger("hsisr")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("diagnose", help="render mode-collapse diagnostics for a run")
    p.add_argument("--run", required=True, help="run directory with curves.csv")
    p.add_argument("--compare", nargs="+", default=[], help="extra run directories to overlay")
    p.add_argument("--out", help="output directory (default <run>/diag)")
    p.set_defaults(handler=handle)


def _frames(runs: list[Path]) -> dict[str, pd.DataFrame]:
    frames: dict[str, pd.DataFrame] = {}
    for run in runs:
        name = run.name or str(run)
        if name in frames:
            name = str(run)
        frames[name] = curves_to_frame(read_curves(run / "curves.csv"))
    return frames


def handle(args: argparse.Namespace) -> int:
    run = Path(args.run)
    runs = [run, *(Path(r) for r in args.compare)]
    out = Path(args.out) if args.out else run / "diag"
    out.mkdir(parents=True, exist_ok=True)

    frames = _frames(runs)
    manifest = new_manifest(args)
    manifest.add(
        plot_curve(frames, "is", out / "is.png", "Inception score during training"),
        plot_curve(frames, "fid", out / "fid.png", "FID during training"),
        plot_curve(frames, "total", out / "total.png", "generator total loss"),
    )

    stability = out / "stability.csv"
    pd.DataFrame([
        {"run": name, "iters": len(f), "total_rolling_var": rolling_variance(f["total"]),
         "adversarial_rolling_var": rolling_variance(f["adversarial"]),
         "adversarial_relative_var": relative_rolling_variance(f["adversarial"])}
        for name, f in frames.items()
    ]).to_csv(stability, index=False)
    manifest.add(stability)

    try:
        ckpt = latest_checkpoint(run)
    except CheckpointError:
        logger.warning("diagnose: %s has no checkpoint, critic densities skipped", run)
        ckpt = None

    if ckpt is not None:
        state = restore_checkpoint(ckpt)
        _, data = build_data(state.config)
        diag = collapse_diagnostics(state, data)
        spectrum = generated_mode_spectrum(state, data)
        manifest.seeds = config_seeds(state.config)
        manifest.extra = {"checkpoint": ckpt, "overlap": repr(diag.overlap)}
        manifest.add(
            *write_diagnostics(diag, spectrum, out),
            plot_density(diag, out / "density.png"),
            plot_mode_spectrum(spectrum, out / "mode_spectrum.png"),
        )
        print(f"overlap = {diag.overlap!r}")
        print(f"svd_concentration = {spectrum.concentration!r}")

    manifest.write(out / "manifest.cfg")
    logger.info("diagnose: %s runs -> %s", len(runs), out)
    return EXIT_OK
