"""ablate: Models 1..5 на одних и тех же данных, сводная таблица ablation.csv."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from database.models import RunStatus
from handlers.common import (
    EXIT_OK,
    add_config_args,
    build_data,
    config_from_args,
    config_seeds,
    eval_pairs,
    new_manifest,
    with_generator_conv,
)
from services.diagnostics import collapse_diagnostics, rolling_variance
from services.evaluation import METHOD_BICUBIC, METHOD_LEGAN, evaluate, fit_niqe_on
from services.run_registry import finish_run, record_metrics, register_run
from services.sr_metrics import ConstantMAScorer, MetricReport
from services.train_config import ablation_switches, save_config
from services.trainer import configure_for_ablation, train

logger = logging.getLogger("hsisr")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("ablate", help="train ablation Models 1..5 and compare them")
    add_config_args(p)
    p.add_argument("--models", type=int, nargs="+", choices=(1, 2, 3, 4, 5), default=[1, 2, 3, 4, 5])
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=handle)


def _row(name: str, report: MetricReport) -> dict:
    return {"model": name, "psnr": report.psnr, "ssim": report.ssim, "pi": report.pi,
            "sam": report.sam, "sre": report.sre}


def handle(args: argparse.Namespace) -> int:
    base = config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    manifest = new_manifest(args)
    manifest.seeds = config_seeds(base)
    manifest.extra = {"models": ",".join(str(m) for m in sorted(set(args.models))),
                      "loss_variant": base.loss_variant}
    run_id = register_run("ablate", str(out), manifest.command, seed=base.seed)

    # архитектурные переключатели не трогают данные: набор общий для всех моделей
    ds, data = build_data(base)
    pairs = eval_pairs(ds)
    niqe_model = fit_niqe_on(ds.train_pairs())
    ma = ConstantMAScorer()
    progress = sys.stderr.isatty()

    reports: dict[str, MetricReport] = {}
    rows = []
    try:
        for model in sorted(set(args.models)):
            config = with_generator_conv(configure_for_ablation(base, model), args.generator_conv)
            model_dir = out / f"model-{model}"
            model_dir.mkdir(parents=True, exist_ok=True)
            save_config(config, model_dir / "config.cfg")
            logger.info("ablate: training Model %s", model)

            state = train(config, data, run_dir=model_dir, progress=progress)
            report = evaluate(METHOD_LEGAN, pairs, state.generator, niqe_model, ma)
            diag = collapse_diagnostics(state, data)
            frame = state.curves_frame()

            name = f"model_{model}"
            reports[name] = report
            rows.append({
                **_row(name, report),
                **ablation_switches(config),
                "overlap": diag.overlap,
                "total_rolling_var": rolling_variance(frame["total"]),
            })
            manifest.add(model_dir / "config.cfg", model_dir / "curves.csv", model_dir / f"ckpt-{state.iter}")
    except Exception as e:
        finish_run(run_id, RunStatus.FAILED, repr(e))
        raise

    reports[METHOD_BICUBIC] = evaluate(METHOD_BICUBIC, pairs, niqe_model=niqe_model, ma_scorer=ma)
    rows.append(_row(METHOD_BICUBIC, reports[METHOD_BICUBIC]))

    table = out / "ablation.csv"
    pd.DataFrame(rows).to_csv(table, index=False)
    manifest.add(table)
    manifest.write(out / "manifest.cfg")
    record_metrics(run_id, reports)
    finish_run(run_id, RunStatus.FINISHED)

    print(pd.DataFrame(rows)[["model", "psnr", "ssim", "sam", "sre"]].to_string(index=False))
    return EXIT_OK
