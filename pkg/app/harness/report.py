"""
Result files of a harness run.

rates.csv and suites.csv have fixed column sets; reals are written with 17
significant digits so parsing them back reproduces the binary64 values. No
timestamps or run ids are written, so a rerun with the same config and seed
produces identical bytes.
"""

import csv
import logging
from pathlib import Path
from typing import Iterable

import yaml

from app.core.errors import OutputError
from app.schemas.config import HarnessConfig
from app.schemas.results import RateTable, SuiteResult, SuiteStatus

logger = logging.getLogger(__name__)

RATES_COLUMNS = ("suite", "axis", "axis_value", "n", "epsilon", "mean", "std_error", "replicates", "seed")
SUITES_COLUMNS = ("suite", "cell_n", "cell_eps", "status", "measured", "threshold", "detail")


def fmt_real(x: float) -> str:
    return format(float(x), ".17g")


def _opt(x, real: bool) -> str:
    if x is None:
        return ""
    return fmt_real(x) if real else str(int(x))


def rate_rows(tables: Iterable[RateTable]) -> list[list[str]]:
    rows = []
    for table in tables:
        for p in table.points:
            rows.append([
                table.suite, table.axis, fmt_real(p.axis_value), str(p.n), fmt_real(p.epsilon),
                fmt_real(p.estimate.mean), fmt_real(p.estimate.std_error),
                str(p.estimate.replicates), str(p.estimate.seed),
            ])
    return rows


def suite_rows(results: Iterable[SuiteResult]) -> list[list[str]]:
    return [
        [
            r.suite, _opt(r.cell_n, real=False), _opt(r.cell_eps, real=True), r.status.value,
            fmt_real(r.measured), fmt_real(r.threshold), r.detail,
        ]
        for r in results
    ]


def _write_csv(path: Path, header: tuple[str, ...], rows: list[list[str]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def emit_csv(tables: list[RateTable], results: list[SuiteResult], output_dir: str | Path) -> list[Path]:
    """
    Write rates.csv and suites.csv into `output_dir`.

    Raises:
        OutputError: the directory is missing or a file cannot be written.
    """
    out = Path(output_dir)
    rates, suites = out / "rates.csv", out / "suites.csv"
    try:
        _write_csv(rates, RATES_COLUMNS, rate_rows(tables))
        _write_csv(suites, SUITES_COLUMNS, suite_rows(results))
    except OSError as exc:
        raise OutputError(f"cannot write results: {exc.strerror or exc}", output_dir=str(out)) from None
    logger.info("wrote %s (%d rows) and %s (%d rows)", rates, sum(len(t.points) for t in tables), suites, len(results))
    return [rates, suites]


def _verdict(r: SuiteResult) -> str:
    cell = "global" if r.cell == "global" else f"n={r.cell_n} eps={r.cell_eps}"
    op = "<=" if r.direction == "le" else ">="
    return f"  [{r.status.value.upper():4}] {cell}: {r.measured:.6g} {op} {r.threshold:.6g}  {r.detail}"


def render_report(
    config: HarnessConfig,
    tables: list[RateTable],
    results: list[SuiteResult],
    descriptions: dict[str, str],
    references: dict[str, str] | None = None,
) -> str:
    lines = ["Diffusion-equivalence verification report", ""]
    for suite in config.suites:
        mine = [r for r in results if r.suite == suite]
        fails = sum(r.status is SuiteStatus.FAIL for r in mine)
        warns = sum(r.status is SuiteStatus.WARN for r in mine)
        status = "FAIL" if fails else ("WARN" if warns else "PASS")
        lines.append(f"== {suite}: {status} ({len(mine)} checks, {fails} failed, {warns} warned)")
        lines.append(f"   {descriptions.get(suite, '')}")
        if references and suite in references:
            lines.append(f"   reference: {references[suite]}")
        lines += [_verdict(r) for r in mine]
        for t in (t for t in tables if t.suite == suite):
            lines.append(
                f"  slope of {t.quantity} in {t.axis}: {t.fitted_slope:.4f} +/- {t.slope_ci_halfwidth:.4f}"
                f" (95% CI, {len(t.points)} points)"
            )
        lines.append("")

    effective = config.model_dump(mode="json")
    effective["thresholds"] = config.effective_thresholds()
    lines.append("== effective configuration")
    lines.append(yaml.safe_dump(effective, sort_keys=True, default_flow_style=False).rstrip())
    return "\n".join(lines) + "\n"


def write_report(text: str, output_dir: str | Path) -> Path:
    path = Path(output_dir) / "report.txt"
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write report: {exc.strerror or exc}", output_dir=str(output_dir)) from None
    return path
