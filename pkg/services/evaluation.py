"""
Оценка на тестовых патчах: LE-GAN, bicubic-бейзлайн и "оракул" (SR = HR).
Отчёт: строки `metric = value` + секция по каналам, плюс CSV-таблицы.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from config import RADIANCE_MAX
from services.hsi_data import HSICube, PatchPair, bicubic_upsample, format_header_text
from services.legan_models import NetworkWeights, super_resolve
from services.niqe import NIQEModel, fit_niqe
from services.sr_metrics import MAScorer, MetricReport, metric_report

logger = logging.getLogger(__name__)

METHOD_LEGAN = "legan"
METHOD_BICUBIC = "bicubic"
METHOD_IDENTITY = "oracle_identity"


def bicubic_baseline(pairs: Sequence[PatchPair]) -> list[HSICube]:
    out = []
    for p in pairs:
        up = bicubic_upsample(p.lr, p.scale)
        out.append(up.with_data(np.clip(up.data, 0.0, RADIANCE_MAX)))
    return out


def predictions(method: str, pairs: Sequence[PatchPair], generator: NetworkWeights | None = None) -> list[HSICube]:
    if method == METHOD_IDENTITY:
        return [p.hr for p in pairs]
    if method == METHOD_BICUBIC:
        return bicubic_baseline(pairs)
    if method == METHOD_LEGAN:
        if generator is None:
            raise ValueError("LE-GAN evaluation needs generator weights")
        return super_resolve(generator, [p.lr for p in pairs])
    raise ValueError(f"unknown evaluation method {method!r}")


def fit_niqe_on(pairs: Sequence[PatchPair], max_cubes: int = 8) -> NIQEModel | None:
    """NIQE по "чистым" HR-патчам обучающей выборки; None, если фитить не на чем."""
    cubes = [p.hr for p in pairs[:max_cubes]]
    if not cubes:
        return None
    return fit_niqe(cubes)


def evaluate(
    method: str,
    pairs: Sequence[PatchPair],
    generator: NetworkWeights | None = None,
    niqe_model: NIQEModel | None = None,
    ma_scorer: MAScorer | None = None,
) -> MetricReport:
    if not pairs:
        raise ValueError("nothing to evaluate: empty test split")
    sr = predictions(method, pairs, generator)
    report = metric_report([p.hr for p in pairs], sr, niqe_model=niqe_model, ma_scorer=ma_scorer)
    logger.info("eval %s: PSNR=%.4f SSIM=%.4f SAM=%.4f SRE=%.4f PI=%.4f",
                method, report.psnr, report.ssim, report.sam, report.sre, report.pi)
    return report


# ---------- report files ----------

def _num(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return repr(float(value))


def report_text(method: str, report: MetricReport) -> str:
    head = format_header_text({
        "method": method,
        "n_cubes": report.n_cubes,
        "psnr": _num(report.psnr),
        "psnr_infinite": "true" if report.psnr_infinite else "false",
        "ssim": _num(report.ssim),
        "pi": _num(report.pi),
        "pi_ma_scorer": "constant" if not math.isnan(report.pi) else "none",
        "sam": _num(report.sam),
        "sam_skipped": report.sam_skipped,
        "sre": _num(report.sre),
    })
    bands = format_header_text({
        f"band_{i:03d}": f"{_num(p)}, {_num(s)}"
        for i, (p, s) in enumerate(zip(report.per_band_psnr, report.per_band_sre))
    })
    return head + "\n[per_band]\n# band = psnr, sre\n" + bands


def parse_report_text(text: str) -> dict[str, str]:
    """Только верхняя секция отчёта (до [per_band])."""
    out: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("["):
            break
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_reports(reports: dict[str, MetricReport], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for method, report in reports.items():
        path = out / f"report-{method}.txt"
        path.write_text(report_text(method, report), encoding="utf-8")
        written.append(path)

        band_path = out / f"per_band-{method}.csv"
        pd.DataFrame({
            "band": np.arange(len(report.per_band_psnr)),
            "psnr": report.per_band_psnr,
            "sre": report.per_band_sre,
        }).to_csv(band_path, index=False)
        written.append(band_path)

    table = out / "metrics.csv"
    pd.DataFrame([
        {"method": m, "psnr": r.psnr, "ssim": r.ssim, "pi": r.pi, "sam": r.sam, "sre": r.sre, "n_cubes": r.n_cubes}
        for m, r in reports.items()
    ]).to_csv(table, index=False)
    written.append(table)
    return written
