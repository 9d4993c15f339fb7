"""runs: список запусков из локального реестра."""

from __future__ import annotations

import argparse
import logging

from config import REGISTRY_ENABLED
from handlers.common import EXIT_OK, positive_int
from services.run_registry import list_runs

logger = logging.getLogger("hsisr")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("runs", help="list recorded runs")
    p.add_argument("--limit", type=positive_int, default=20)
    p.set_defaults(handler=handle)


def _ts(value) -> str:
    return value.strftime("%Y-%m-%d %H:%M:%S") if value else "-"


def handle(args: argparse.Namespace) -> int:
    if not REGISTRY_ENABLED:
        print("run registry is disabled (HSISR_REGISTRY_ENABLED=0)")
        return EXIT_OK

    rows = list_runs(args.limit)
    if not rows:
        print("no runs recorded")
        return EXIT_OK

    for r in rows:
        seed = "-" if r.seed is None else r.seed
        print(f"{r.id:>4}  {r.command:<8} {r.status:<9} seed={seed:<6} "
              f"{_ts(r.started_at)}  {_ts(r.finished_at)}  metrics={r.n_metrics}  {r.run_dir}")
    return EXIT_OK
