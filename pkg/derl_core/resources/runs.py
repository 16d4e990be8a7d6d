"""Background training runs: start, poll, page through step losses, close."""

from __future__ import annotations

import asyncio
import logging
import time
import uuid
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from ..config import load_run_config
from ..engine import DerlEngine
from ..training import StepRecord
from ..utils.logging import truncate

logger = logging.getLogger("derl_core.resources.runs")

# ----------------------------- Run storage -----------------------------

RUN_TTL_SECONDS = 60 * 60
RUN_MAX_STEPS = 250_000


class RunCancelled(Exception):
    """Raised inside the training thread once its run has been closed."""


@dataclass
class TrainingRun:
    id: str
    created_at: float
    total: int = 0
    items: List[Dict[str, Any]] = field(default_factory=list)
    ready: bool = False
    error: Optional[str] = None
    result: Optional[Dict[str, Any]] = None
    cancelled: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    def is_expired(self) -> bool:
        return (time.time() - self.created_at) > RUN_TTL_SECONDS

    def record(self, step: StepRecord) -> None:
        if self.cancelled:
            raise RunCancelled(self.id)
        if len(self.items) < RUN_MAX_STEPS:
            row = asdict(step)
            row["rec_levels"] = {str(k): v for k, v in step.rec_levels.items()}
            self.items.append(row)
            self.total = len(self.items)


_runs: Dict[str, TrainingRun] = {}
_run_tasks: Dict[str, asyncio.Task] = {}


def _cleanup_expired_runs() -> None:
    expired = [rid for rid, run in list(_runs.items()) if run.is_expired()]
    for rid in expired:
        run = _runs.pop(rid, None)
        if run is not None:
            run.cancelled = True
        task = _run_tasks.pop(rid, None)
        if task and not task.done():
            task.cancel()


# ----------------------------- Run body -----------------------------

async def _train_run(rid: str, config_text: str | None, overrides: List[str], out: str) -> None:
    run = _runs.get(rid)
    if run is None:
        return
    try:
        config = load_run_config(text=config_text, overrides=overrides)
        engine = DerlEngine.from_env()
        run.result = await asyncio.to_thread(engine.train, config, out, None, run.record)
        run.ready = True
    except RunCancelled:
        run.error = "cancelled"
    except Exception as exc:
        logger.error("Training run %s failed: %s", rid, exc)
        run.error = str(exc)


# ----------------------------- Run tools -----------------------------

async def derl_train_start(
    config_text: str | None = None,
    overrides: list[str] | None = None,
    out: str | None = None,
) -> Dict[str, Any]:
    """Start training in the background.

    Returns a runId for derl_train_status, derl_train_history_chunk and derl_train_close.

    Parameters:
    - config_text: INI text with [run]/[data]/[model]/[train] sections (toy preset when omitted)
    - overrides: section.key=value strings applied after config_text
    - out: output directory for model.bin and history.csv (defaults to runs/<runId> under DERL_HOME)
    """
    logger.debug(
        "Tool call: derl_train_start(config_text=%s, overrides=%s, out=%s)",
        truncate(str(config_text), 200), overrides, out,
    )
    _cleanup_expired_runs()

    rid = str(uuid.uuid4())
    out = out or f"runs/{rid}"
    run = TrainingRun(
        id=rid,
        created_at=time.time(),
        params={"overrides": list(overrides or []), "out": out, "config_text": config_text},
    )
    _runs[rid] = run

    task = asyncio.create_task(_train_run(rid, config_text, list(overrides or []), out))
    _run_tasks[rid] = task

    result = {"runId": rid, "ready": run.ready, "total": run.total}
    logger.debug("Tool result: derl_train_start -> %s", truncate(str(result)))
    return result


async def derl_train_status(run_id: str) -> Dict[str, Any]:
    """Get progress for a running or finished training run."""
    logger.debug("Tool call: derl_train_status(run_id=%s)", run_id)
    _cleanup_expired_runs()
    run = _runs.get(run_id)
    if not run:
        return {"error": "run not found"}
    latest = run.items[-1] if run.items else None
    result = {
        "runId": run.id,
        "ready": run.ready,
        "total": run.total,
        "latest": latest,
        "error": run.error,
        "result": run.result,
        "params": run.params,
    }
    logger.debug("Tool result: derl_train_status -> %s", truncate(str(result)))
    return result


async def derl_train_history_chunk(run_id: str, offset: int = 0, limit: int = 100) -> Dict[str, Any]:
    """Fetch a slice of per-step loss records; while training runs, returns what exists so far."""
    logger.debug("Tool call: derl_train_history_chunk(run_id=%s, offset=%s, limit=%s)", run_id, offset, limit)
    _cleanup_expired_runs()
    run = _runs.get(run_id)
    if not run:
        return {"error": "run not found"}
    start = max(0, int(offset))
    end = max(start, start + int(limit))
    items = run.items[start:end]
    next_offset = end if end < len(run.items) else None
    result = {
        "runId": run.id,
        "ready": run.ready,
        "total": run.total,
        "items": items,
        "nextOffset": next_offset,
    }
    logger.debug("Tool result: derl_train_history_chunk -> %s", truncate(str(result)))
    return result


async def derl_train_close(run_id: str) -> Dict[str, Any]:
    """Forget a run; a run still training stops at its next step."""
    logger.debug("Tool call: derl_train_close(run_id=%s)", run_id)
    run = _runs.pop(run_id, None)
    if run is not None:
        run.cancelled = True
    task = _run_tasks.pop(run_id, None)
    if task and not task.done():
        task.cancel()
    result = {"ok": True, "runId": run_id, "existed": run is not None}
    logger.debug("Tool result: derl_train_close -> %s", truncate(str(result)))
    return result
