"""
Result schemas.

Pydantic models for what the toolkit hands back to callers and writes out:
clock evaluations, log-likelihood ratios, Monte Carlo estimates, rate tables
and suite verdicts.
"""

import math
from app.core.compat import StrEnum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ClockKind(StrEnum):
    RHO = "rho"
    THETA = "theta"
    ETA = "eta"
    A = "A"
    A_BAR_N = "A_bar_n"


class ClockResult(BaseModel):
    """One clock functional evaluated on one path."""

    kind: ClockKind
    query_time: float = Field(..., ge=0)
    value: float = Field(..., ge=0)
    path_span_ok: bool = Field(True, description="False when an inverse level was not reached and value is the span end")

    model_config = ConfigDict(frozen=True)


class LogLikelihoodRatio(BaseModel):
    value: float
    stoch_integral_part: float
    bounded_variation_part: float

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _parts_add_up(self) -> "LogLikelihoodRatio":
        parts = (self.value, self.stoch_integral_part, self.bounded_variation_part)
        if not all(math.isfinite(p) for p in parts):
            raise ValueError("log-likelihood ratio parts must be finite")
        total = self.stoch_integral_part + self.bounded_variation_part
        if abs(total - self.value) > 1e-9 * max(1.0, abs(self.value)):
            raise ValueError("value must equal stoch_integral_part + bounded_variation_part")
        return self


class MCEstimate(BaseModel):
    """Monte Carlo mean with std_error = sample std / sqrt(replicates)."""

    mean: float
    std_error: float = Field(..., ge=0)
    replicates: int = Field(..., gt=0, description="Replicates kept after drops")
    seed: int = Field(..., ge=0)
    dropped: int = Field(0, ge=0)

    model_config = ConfigDict(frozen=True)


class RatePoint(BaseModel):
    axis_value: float = Field(..., gt=0)
    n: int
    epsilon: float
    estimate: MCEstimate

    model_config = ConfigDict(frozen=True)


class RateTable(BaseModel):
    """Log-log least-squares fit of estimate means against one sweep axis."""

    suite: str = ""
    axis: Literal["n", "epsilon"]
    points: list[RatePoint]
    fitted_slope: float
    slope_ci_halfwidth: float = Field(..., ge=0)
    intercept: float = 0.0
    quantity: str = Field("", description="What the means measure, in words")

    model_config = ConfigDict(frozen=True)


class SuiteStatus(StrEnum):
    PASS = "pass"
    FAIL = "fail"
    WARN = "warn"


class SuiteResult(BaseModel):
    """
    One check of one suite. `direction` says how `measured` is compared with
    `threshold`: "le" passes when measured <= threshold, "ge" when measured >= threshold.
    Trend checks that are only indicative report warn instead of fail.
    """

    suite: str
    cell_n: Optional[int] = None
    cell_eps: Optional[float] = None
    status: SuiteStatus
    measured: float
    threshold: float
    direction: Literal["le", "ge"] = "le"
    detail: str = ""

    model_config = ConfigDict(frozen=True)

    @property
    def cell(self) -> tuple[Optional[int], Optional[float]] | str:
        if self.cell_n is None and self.cell_eps is None:
            return "global"
        return (self.cell_n, self.cell_eps)

    @property
    def violated(self) -> bool:
        if math.isnan(self.measured):
            return True
        if self.direction == "le":
            return self.measured > self.threshold
        return self.measured < self.threshold

    @model_validator(mode="after")
    def _status_matches(self) -> "SuiteResult":
        if self.status is SuiteStatus.PASS and self.violated:
            raise ValueError("status pass with measured violating threshold")
        if self.status is SuiteStatus.FAIL and not self.violated:
            raise ValueError("status fail with measured within threshold")
        return self

    @classmethod
    def judge(
        cls,
        suite: str,
        measured: float,
        threshold: float,
        direction: Literal["le", "ge"] = "le",
        detail: str = "",
        cell_n: Optional[int] = None,
        cell_eps: Optional[float] = None,
        soft: bool = False,
    ) -> "SuiteResult":
        """Build a result whose status follows from the comparison; `soft` turns a failure into warn."""
        probe = cls.model_construct(measured=measured, threshold=threshold, direction=direction)
        if probe.violated:
            status = SuiteStatus.WARN if soft else SuiteStatus.FAIL
        else:
            status = SuiteStatus.PASS
        return cls(
            suite=suite, cell_n=cell_n, cell_eps=cell_eps, status=status,
            measured=float(measured), threshold=float(threshold), direction=direction, detail=detail,
        )
