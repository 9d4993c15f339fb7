import argparse
import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger("hsisr")

PROJECT_ROOT = Path(__file__).parent
sys.path.insert(0, str(PROJECT_ROOT))

from config import LOG_DIR, LOG_LEVEL, TOOL_VERSION, TORCH_THREADS  # noqa: E402

from handlers.common import EXIT_DIVERGED, EXIT_USAGE  # noqa: E402
from handlers import (  # noqa: E402
    ablate_handler,
    degrade_handler,
    diagnose_handler,
    eval_handler,
    runs_handler,
    synth_handler,
    train_handler,
)

from services.hsi_data import CubeFormatError, CubeValidationError  # noqa: E402
from services.legan_losses import LossInputError  # noqa: E402
from services.legan_models import ModelShapeError  # noqa: E402
from services.niqe import NIQENotFittedError  # noqa: E402
from services.sr_metrics import MetricInputError  # noqa: E402
from services.tensor_archive import CheckpointError  # noqa: E402
from services.train_config import ConfigError  # noqa: E402
from services.trainer import TrainingDivergedError  # noqa: E402

# Ошибки входных данных/конфига -> код 2
USAGE_ERRORS = (
    ConfigError,
    CubeFormatError,
    CubeValidationError,
    CheckpointError,
    FileNotFoundError,
    MetricInputError,
    ModelShapeError,
    LossInputError,
    NIQENotFittedError,
)


def setup_logging() -> None:
    os.makedirs(LOG_DIR, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(os.path.join(LOG_DIR, "hsisr.log")),
            logging.StreamHandler(),
        ],
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsisr",
        description="LE-GAN hyperspectral super-resolution: data, training, metrics, diagnostics",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Порядок = порядок в --help
    synth_handler.register(subparsers)
    degrade_handler.register(subparsers)
    train_handler.register(subparsers)
    eval_handler.register(subparsers)
    diagnose_handler.register(subparsers)
    ablate_handler.register(subparsers)
    runs_handler.register(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Точка входа CLI; возвращает код выхода (0 / 2 / 3, 1 на неожиданной ошибке)."""
    setup_logging()
    if TORCH_THREADS > 0:
        import torch

        torch.set_num_threads(TORCH_THREADS)

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse: 2 на ошибке аргументов, 0 на --help/--version
        return int(e.code or 0)
    args.argv = argv

    try:
        return int(args.handler(args))
    except TrainingDivergedError as e:
        logger.error("numerical abort: %s", e)
        return EXIT_DIVERGED
    except USAGE_ERRORS as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_USAGE
    except Exception as e:
        logger.exception("UNHANDLED_ERROR: %r", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
