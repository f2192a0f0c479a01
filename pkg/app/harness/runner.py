"""
Harness entry points behind the command line.

`run` executes the configured suites one after another and writes
rates.csv, suites.csv and report.txt; `validate` only checks the configured
model. Both return a process exit code: 0 success, 1 a failed check, 2 a
configuration or model error, 3 a simulation or output error.
"""

import logging
from pathlib import Path
from typing import Iterable

from app.core.config import settings
from app.core.errors import ConfigurationError, ToolkitError
from app.core.logging import RUN_CONTEXT_FILTER, new_run_id
from app.harness.config_loader import load_config
from app.harness.report import emit_csv, render_report, write_report
from app.harness.suites import DESCRIPTIONS, REFERENCES, SUITES, SuiteContext
from app.middleware.suite_logging import run_suite
from app.schemas.config import HarnessConfig
from app.schemas.model import ModelSpec, ValidationReport
from app.schemas.results import RateTable, SuiteResult, SuiteStatus
from app.sde import model_core
from app.sde.model_core import LibraryEntry
from app.stats.metrics import ReplicatePool

logger = logging.getLogger("app.harness")


def prepare_model(config: HarnessConfig) -> tuple[LibraryEntry, ModelSpec]:
    """Builtin entry with parameter and declared-constant overrides, and its spec at (n, eps)."""
    entry = model_core.lookup(config.model_name, **config.model_params)
    if config.declared:
        entry = model_core.with_declared(entry, **config.declared)
    spec = model_core.build_model(entry, epsilon=config.epsilon, horizon_T=config.T, n_obs=config.n, w=config.w)
    return entry, spec


def _prepare_output(output_dir: str) -> None:
    try:
        Path(output_dir).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"output_dir is not writable: {exc.strerror or exc}", output_dir=output_dir) from None


def execute(config: HarnessConfig) -> tuple[list[SuiteResult], list[RateTable]]:
    """Validate the model and run every configured suite in order."""
    entry, spec = prepare_model(config)
    model_core.require_valid(spec)
    ctx = SuiteContext(config=config, entry=entry, pool=ReplicatePool(config.threads or settings.THREADS))
    results: list[SuiteResult] = []
    tables: list[RateTable] = []
    for name in config.suites:
        r, t = run_suite(name, SUITES[name], ctx)
        results += r
        tables += t
    return results, tables


def run(
    config_path: str | Path,
    overrides: Iterable[str] = (),
    output_dir: str | None = None,
    threads: int | None = None,
) -> int:
    RUN_CONTEXT_FILTER.run_id = new_run_id()
    try:
        config = load_config(config_path, overrides)
        update = {k: v for k, v in (("output_dir", output_dir), ("threads", threads)) if v is not None}
        if update:
            config = HarnessConfig(**{**config.model_dump(), **update})
        _prepare_output(config.output_dir)
        logger.info("RUN %s model=%s suites=%s seed=%d", config_path, config.model_name, ",".join(config.suites), config.seed)

        results, tables = execute(config)
        emit_csv(tables, results, config.output_dir)
        write_report(render_report(config, tables, results, DESCRIPTIONS, REFERENCES), config.output_dir)

        failed = [r for r in results if r.status is SuiteStatus.FAIL]
        code = 1 if failed else 0
        logger.info("RUN done checks=%d failed=%d exit=%d", len(results), len(failed), code)
        return code

    except ToolkitError as exc:
        logger.error("RUN aborted (exit %d): %s", exc.exit_code, exc)
        return exc.exit_code

    finally:
        RUN_CONTEXT_FILTER.reset()


def validate(config_path: str | Path, overrides: Iterable[str] = ()) -> tuple[int, str]:
    """validate_model for the configured model; returns (exit code, report text)."""
    RUN_CONTEXT_FILTER.run_id = new_run_id()
    try:
        config = load_config(config_path, overrides)
        _, spec = prepare_model(config)
        report: ValidationReport = model_core.validate_model(spec)
        return (0 if report.ok else 2), report.summary()
    except ToolkitError as exc:
        logger.error("VALIDATE aborted (exit %d): %s", exc.exit_code, exc)
        return exc.exit_code, str(exc)
    finally:
        RUN_CONTEXT_FILTER.reset()
