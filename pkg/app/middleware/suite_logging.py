"""
Suite logging wrapper for harness runs.

Wraps the execution of one suite the way an access-log middleware wraps a
request: the suite name is pushed into the logging context so every record
emitted while it runs carries it, the duration is measured, a one-line
summary with the verdict is logged, and unhandled errors are logged with
their stack trace before being re-raised.

"""

import time
import logging
from typing import Callable, TypeVar

from app.core.logging import RUN_CONTEXT_FILTER
from app.schemas.results import SuiteResult, SuiteStatus

logger = logging.getLogger("app.suite")

Ctx = TypeVar("Ctx")
SuiteOutcome = tuple[list[SuiteResult], list]


def overall_status(results: list[SuiteResult]) -> str:
    """fail if any check failed, else warn if any warned, else pass."""
    statuses = {r.status for r in results}
    if SuiteStatus.FAIL in statuses:
        return SuiteStatus.FAIL.value
    if SuiteStatus.WARN in statuses:
        return SuiteStatus.WARN.value
    return SuiteStatus.PASS.value


def run_suite(name: str, fn: Callable[[Ctx], SuiteOutcome], ctx: Ctx) -> SuiteOutcome:
    """
    Run one suite under its logging context.

    Logged fields:
      - suite name
      - overall status (pass/warn/fail)
      - number of checked cells
      - duration in milliseconds

    Args:
        name (str): Suite name, also written into every log record.
        fn (Callable): The suite; returns its results and rate tables.
        ctx: Whatever the suite needs (config, model, pool).

    Returns:
        tuple: The suite's (results, rate tables).

    Raises:
        Exception: Any error raised by the suite.
    """
    previous = RUN_CONTEXT_FILTER.suite
    RUN_CONTEXT_FILTER.suite = name
    start = time.perf_counter()

    try:
        results, tables = fn(ctx)
        duration_ms = int((time.perf_counter() - start) * 1000)
        logger.info(
            "SUITE %s status=%s cells=%d dur=%dms",
            name,
            overall_status(results),
            len(results),
            duration_ms,
        )
        return results, tables

    except Exception:
        duration_ms = int((time.perf_counter() - start) * 1000)
        logger.exception("ERR suite %s dur=%dms", name, duration_ms)
        raise

    finally:
        RUN_CONTEXT_FILTER.suite = previous
