"""
train: pretrain + joint_train по конфигу, раскладка run-директории:
config.cfg, curves.csv, ckpt-<iter>/, diag/, manifest.cfg.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from database.models import RunStatus
from handlers.common import (
    EXIT_DIVERGED,
    EXIT_OK,
    add_config_args,
    build_data,
    config_from_args,
    config_seeds,
    new_manifest,
    override,
    with_generator_conv,
)
from services.diagnostics import collapse_diagnostics, generated_mode_spectrum, write_diagnostics
from services.run_registry import finish_run, register_run
from services.train_config import TrainConfig, ablation_switches, save_config
from services.trainer import (
    TrainingDivergedError,
    TrainState,
    configure_for_ablation,
    init_state,
    joint_train,
    latest_checkpoint,
    pretrain,
    restore_checkpoint,
    save_checkpoint,
    write_curves,
)

logger = logging.getLogger("hsisr")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("train", help="train LE-GAN and write a run directory")
    add_config_args(p)
    p.add_argument("--ablation", type=int, choices=(1, 2, 3, 4, 5), default=None,
                   help="ablation model 1..5 (5 = full LE-GAN)")
    p.add_argument("--loss", choices=("ssrp", "wasserstein_plain", "js"), default=None,
                   help="loss variant")
    p.add_argument("--gradient-penalty", action="store_true", help="add a gradient penalty to the critic loss")
    p.add_argument("--checkpoint-period", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue from the latest ckpt-* in --out")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(handler=handle)


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    config = config_from_args(args)
    config = override(
        config,
        loss_variant=args.loss,
        checkpoint_period=args.checkpoint_period,
        gradient_penalty=True if args.gradient_penalty else None,
    )
    if args.ablation is not None or config.ablation_model != 5:
        config = configure_for_ablation(config, args.ablation)
    return with_generator_conv(config, args.generator_conv)


def ignored_on_resume(args: argparse.Namespace) -> list[str]:
    """Флаги конфига, которые --resume отбрасывает: конфиг берётся из чекпоинта."""
    flags = {
        "--config": args.config,
        "--scale": args.scale,
        "--seed": args.seed,
        "--pretrain-iters": args.pretrain_iters,
        "--joint-iters": args.joint_iters,
        "--eval-period": args.eval_period,
        "--batch-size": args.batch_size,
        "--generator-conv": args.generator_conv,
        "--ablation": args.ablation,
        "--loss": args.loss,
        "--checkpoint-period": args.checkpoint_period,
        "--gradient-penalty": args.gradient_penalty or None,
        "--preset": args.preset if args.preset != "desk" else None,
    }
    return [flag for flag, value in flags.items() if value is not None]


def _write_diagnostics(state: TrainState, data, run_dir: Path) -> list[Path]:
    diag = collapse_diagnostics(state, data)
    spectrum = generated_mode_spectrum(state, data)
    return write_diagnostics(diag, spectrum, run_dir / "diag")


def handle(args: argparse.Namespace) -> int:
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)

    if args.resume:
        state = restore_checkpoint(latest_checkpoint(run_dir))
        config = state.config
        dropped = ignored_on_resume(args)
        if dropped:
            logger.warning("--resume uses the checkpoint config; ignoring %s", ", ".join(dropped))
    else:
        config = resolve_config(args)
        state = None

    cfg_path = run_dir / "config.cfg"
    save_config(config, cfg_path)

    manifest = new_manifest(args)
    manifest.config_path = str(cfg_path)
    manifest.seeds = config_seeds(config)
    manifest.extra = {
        "loss_variant": config.loss_variant,
        "ablation_model": config.ablation_model,
        **{f"switch.{k}": v for k, v in ablation_switches(config).items()},
    }
    manifest.add(cfg_path)

    run_id = register_run(
        "train", str(run_dir), manifest.command,
        seed=config.seed, loss_variant=config.loss_variant, ablation_model=config.ablation_model,
    )

    _, data = build_data(config)
    progress = sys.stderr.isatty()
    if state is None:
        state = init_state(config)
        pretrain(state, data, progress=progress)

    curves_path = run_dir / "curves.csv"
    try:
        joint_train(state, data, run_dir=run_dir, progress=progress)
    except TrainingDivergedError as e:
        logger.error("training aborted: %s", e)
        write_curves(state.curves, curves_path)
        manifest.add(curves_path)
        manifest.extra["diverged_at"] = e.iteration
        manifest.write(run_dir / "manifest.cfg")
        finish_run(run_id, RunStatus.DIVERGED, str(e))
        return EXIT_DIVERGED
    except Exception as e:
        finish_run(run_id, RunStatus.FAILED, repr(e))
        raise

    ckpt = run_dir / f"ckpt-{state.iter}"
    save_checkpoint(state, ckpt)
    write_curves(state.curves, curves_path)
    manifest.add(ckpt, curves_path, *_write_diagnostics(state, data, run_dir))
    if state.curves:
        manifest.extra["final_total"] = state.curves[-1].total
    manifest.write(run_dir / "manifest.cfg")

    finish_run(run_id, RunStatus.FINISHED)
    logger.info("train: %s iterations, run dir %s", state.iter, run_dir)
    return EXIT_OK
