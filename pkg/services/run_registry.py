"""
Локальный реестр запусков (runs + metric_records) поверх database/.
Реестр вспомогательный: ошибки БД пишутся в лог и не роняют команду.
"""

from __future__ import annotations

import asyncio
import logging
import math
import shlex
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Awaitable, Callable, TypeVar

from sqlalchemy import select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import selectinload

from config import REGISTRY_ENABLED
from database.models import MetricRecord, Run, RunStatus
from database.session import dispose_db, get_db, init_db
from services.sr_metrics import MetricReport

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class RunRow:
    id: int
    command: str
    run_dir: str
    seed: int | None
    status: str
    started_at: datetime | None
    finished_at: datetime | None
    n_metrics: int


def _finite(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


async def register_run_async(command: str, run_dir: str, argv: list[str], **fields: Any) -> int:
    await init_db()
    async with get_db() as db:
        run = Run(command=command, run_dir=run_dir, argv=shlex.join(argv), **fields)
        db.add(run)
        await db.flush()
        return int(run.id)


async def finish_run_async(run_id: int, status: RunStatus, note: str | None = None) -> None:
    async with get_db() as db:
        run = (await db.execute(select(Run).where(Run.id == run_id))).scalar_one_or_none()
        if not run:
            logger.warning("registry: run %s not found", run_id)
            return
        run.status = status
        run.note = note
        run.finished_at = datetime.utcnow()


async def record_metrics_async(run_id: int, reports: dict[str, MetricReport]) -> None:
    async with get_db() as db:
        for method, r in reports.items():
            db.add(MetricRecord(
                run_id=run_id, method=method,
                psnr=_finite(r.psnr), ssim=_finite(r.ssim), pi=_finite(r.pi),
                sam=_finite(r.sam), sre=_finite(r.sre), n_cubes=r.n_cubes,
            ))


async def list_runs_async(limit: int = 50) -> list[RunRow]:
    await init_db()
    async with get_db() as db:
        runs = (await db.execute(
            select(Run).options(selectinload(Run.metrics)).order_by(Run.id.desc()).limit(limit)
        )).scalars().all()
        return [
            RunRow(
                id=r.id, command=r.command, run_dir=r.run_dir, seed=r.seed,
                status=r.status.value if r.status else "", started_at=r.started_at,
                finished_at=r.finished_at, n_metrics=len(r.metrics),
            )
            for r in runs
        ]


# ---------- sync wrappers for the CLI ----------

def _run(factory: Callable[[], Awaitable[T]]) -> T:
    async def wrapped() -> T:
        try:
            return await factory()
        finally:
            # пул соединений привязан к event loop этого asyncio.run
            await dispose_db()

    return asyncio.run(wrapped())


def register_run(command: str, run_dir: str, argv: list[str], **fields: Any) -> int | None:
    if not REGISTRY_ENABLED:
        return None
    try:
        return _run(lambda: register_run_async(command, run_dir, argv, **fields))
    except (SQLAlchemyError, OSError) as e:
        logger.warning("registry unavailable, run not recorded: %s", e)
        return None


def finish_run(run_id: int | None, status: RunStatus, note: str | None = None) -> None:
    if run_id is None:
        return
    try:
        _run(lambda: finish_run_async(run_id, status, note))
    except (SQLAlchemyError, OSError) as e:
        logger.warning("registry: cannot finish run %s: %s", run_id, e)


def record_metrics(run_id: int | None, reports: dict[str, MetricReport]) -> None:
    if run_id is None:
        return
    try:
        _run(lambda: record_metrics_async(run_id, reports))
    except (SQLAlchemyError, OSError) as e:
        logger.warning("registry: cannot record metrics for run %s: %s", run_id, e)


def list_runs(limit: int = 50) -> list[RunRow]:
    return _run(lambda: list_runs_async(limit))
