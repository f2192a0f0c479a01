"""
Error hierarchy for the toolkit.

Every error carries an `exit_code` the harness maps straight onto its process
exit status, and a `detail` string meant for humans (report.txt, logs).
"""

from typing import Any


class ToolkitError(Exception):
    """Base class of all toolkit errors."""

    exit_code: int = 1

    def __init__(self, detail: str, **context: Any) -> None:
        super().__init__(detail)
        self.detail = detail
        self.context = context

    def __str__(self) -> str:
        if not self.context:
            return self.detail
        extra = ", ".join(f"{k}={v!r}" for k, v in self.context.items())
        return f"{self.detail} ({extra})"


class ConfigurationError(ToolkitError):
    exit_code = 2


class ModelValidationError(ConfigurationError):
    """Declared model constants are violated on the probe grid."""

    def __init__(self, detail: str, report: Any = None) -> None:
        super().__init__(detail)
        self.report = report


class ModelEvaluationError(ConfigurationError):
    """f, sigma or sigma' returned a non-finite value at a probe point."""

    def __init__(self, detail: str, point: float) -> None:
        super().__init__(detail, point=point)
        self.point = point


class SimulationBlowUp(ToolkitError):
    exit_code = 3

    def __init__(self, detail: str, step: int) -> None:
        super().__init__(detail, step=step)
        self.step = step


class ClockOverrun(ToolkitError):
    """An inverse clock level or a stopping time lies beyond the simulated span."""

    exit_code = 3

    def __init__(self, detail: str, requested: float, reached: float) -> None:
        super().__init__(detail, requested=requested, reached=reached)
        self.requested = requested
        self.reached = reached


class PathRangeError(ToolkitError):
    exit_code = 3


class ReplicateDropError(ToolkitError):
    exit_code = 3


class DegenerateRatePoint(ToolkitError):
    """A rate point with non-positive mean; the caller must switch to absolute tolerances."""


class EstimateOutOfRange(ToolkitError):
    pass


class AdaptednessViolation(ToolkitError):
    pass


class OutputError(ToolkitError):
    """Result files could not be written."""

    exit_code = 3
