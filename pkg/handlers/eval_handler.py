"""eval: метрики PSNR/SSIM/PI/SAM/SRE на тестовой части для чекпоинта, bicubic и оракула."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from config import SCALE_PRESETS, SEED_OVERRIDE, SUPPORTED_SCALES
from database.models import RunStatus
from handlers.common import EXIT_OK, build_data, config_seeds, default_out, eval_pairs, new_manifest, override
from services.evaluation import (
    METHOD_BICUBIC,
    METHOD_IDENTITY,
    METHOD_LEGAN,
    evaluate,
    fit_niqe_on,
    report_text,
    write_reports,
)
from services.run_registry import finish_run, record_metrics, register_run
from services.sr_metrics import ConstantMAScorer, MetricReport
from services.train_config import ConfigError, TrainConfig, load_config, preset_config
from services.trainer import latest_checkpoint, restore_checkpoint

logger = logging.getLogger("hsisr")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("eval", help="evaluate a checkpoint and/or baselines on the test split")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--run", help="run directory (latest ckpt-* is used)")
    src.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--config", help="config for baseline-only evaluation (no checkpoint)")
    p.add_argument("--preset", choices=sorted(SCALE_PRESETS), default="desk")
    p.add_argument("--scale", type=int, choices=SUPPORTED_SCALES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--baseline", choices=("bicubic",), default=None)
    p.add_argument("--oracle-identity", action="store_true", help="feed HR as SR (sanity check)")
    p.add_argument("--no-niqe", action="store_true", help="skip NIQE fitting, PI is reported as nan")
    p.add_argument("--out", help="output directory (default <run>/eval)")
    p.set_defaults(handler=handle)


def _baseline_config(args: argparse.Namespace) -> TrainConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = preset_config(args.preset, args.scale or 2)
        if SEED_OVERRIDE is not None:
            config = override(config, seed=SEED_OVERRIDE)
    return override(config, seed=args.seed)


def handle(args: argparse.Namespace) -> int:
    state = None
    if args.run or args.checkpoint:
        ckpt = Path(args.checkpoint) if args.checkpoint else latest_checkpoint(args.run)
        state = restore_checkpoint(ckpt)
        config = state.config
    else:
        ckpt = None
        config = _baseline_config(args)

    methods = []
    if state is not None:
        methods.append(METHOD_LEGAN)
    if args.baseline == "bicubic":
        methods.append(METHOD_BICUBIC)
    if args.oracle_identity:
        methods.append(METHOD_IDENTITY)
    if not methods:
        raise ConfigError("nothing to evaluate: give --run/--checkpoint, --baseline or --oracle-identity")

    out = Path(args.run) / "eval" if args.run and not args.out else default_out(args, "eval")
    out.mkdir(parents=True, exist_ok=True)

    manifest = new_manifest(args)
    manifest.seeds = config_seeds(config)
    manifest.extra = {"methods": ",".join(methods), "checkpoint": ckpt or "none"}
    run_id = register_run("eval", str(out), manifest.command, seed=config.seed)

    ds, _ = build_data(config)
    pairs = eval_pairs(ds)
    niqe_model = None if args.no_niqe else fit_niqe_on(ds.train_pairs())
    ma = ConstantMAScorer()

    reports: dict[str, MetricReport] = {}
    for method in methods:
        reports[method] = evaluate(
            method, pairs,
            generator=state.generator if state is not None else None,
            niqe_model=niqe_model, ma_scorer=ma,
        )

    manifest.add(*write_reports(reports, out))
    manifest.write(out / "manifest.cfg")
    record_metrics(run_id, reports)
    finish_run(run_id, RunStatus.FINISHED)

    for method, report in reports.items():
        head = report_text(method, report).split("\n[per_band]")[0]
        print(head.rstrip())
        print()
    return EXIT_OK
