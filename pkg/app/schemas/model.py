"""
Model schemas.

Pydantic models for the statistical model ingredients: the drift f with its
declared constant M, the diffusion coefficient sigma with sigma0, sigma1, K, the
assembled `ModelSpec`, the fine simulation grid, and the validation report.
All models are frozen; the callables they hold must be pure and accept numpy
arrays.
"""

import math
from app.core.compat import StrEnum
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.errors import ConfigurationError

ArrayFn = Callable[[np.ndarray], np.ndarray]


class DriftSpec(BaseModel):
    """Drift f in the class F_M: |f(0)| <= M and M-Lipschitz."""

    name: str = Field("drift", description="Human-readable label")
    eval: ArrayFn = Field(..., description="Vectorised drift f(x)")
    lipschitz_M: float = Field(..., gt=0, description="Declared Lipschitz constant M")
    origin_bound: float = Field(..., ge=0, description="Declared bound on |f(0)|")

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _origin_within_M(self) -> "DriftSpec":
        if self.origin_bound > self.lipschitz_M:
            raise ValueError("origin_bound must not exceed lipschitz_M (|f(0)| <= M)")
        return self


class DiffusionSpec(BaseModel):
    """Diffusion coefficient sigma, bounded in [sigma0, sigma1] and K-Lipschitz."""

    name: str = Field("sigma", description="Human-readable label")
    eval: ArrayFn = Field(..., description="Vectorised sigma(x) > 0")
    eval_deriv: Optional[ArrayFn] = Field(None, description="sigma'(x), required when (H2) is claimed")
    sigma0: float = Field(..., gt=0, description="Lower bound of sigma")
    sigma1: float = Field(..., gt=0, description="Upper bound of sigma")
    lipschitz_K: float = Field(..., ge=0, description="Lipschitz constant of sigma (and of sigma')")

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "DiffusionSpec":
        if self.sigma0 > self.sigma1:
            raise ValueError("sigma0 must be <= sigma1")
        return self

    @property
    def has_derivative(self) -> bool:
        return self.eval_deriv is not None


class ModelSpec(BaseModel):
    """
    One small-noise diffusion experiment: dy = f(y)dt + eps*sigma(y)dW, y0 = w,
    observed on the uniform grid t_i = i*T/n.
    """

    name: str = Field("model", description="Builtin name or free label")
    drift: DriftSpec
    diffusion: DiffusionSpec
    epsilon: float = Field(..., gt=0, lt=1, description="Noise level, 0 < eps < 1")
    horizon_T: float = Field(..., gt=0, description="Observation horizon T")
    n_obs: int = Field(..., ge=1, description="Number of observation intervals n")
    w: float = Field(0.0, description="Initial condition y0")
    fg_lipschitz_L: Optional[float] = Field(None, gt=0, description="Lipschitz constant of f/sigma")

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @property
    def dt_obs(self) -> float:
        return self.horizon_T / self.n_obs

    def obs_grid(self) -> np.ndarray:
        return np.arange(self.n_obs + 1, dtype=float) * self.dt_obs

    def f(self, x):
        return self.drift.eval(x)

    def sigma(self, x):
        return self.diffusion.eval(x)

    def sigma2(self, x):
        s = self.diffusion.eval(x)
        return s * s

    def f_over_sigma2(self, x):
        return self.drift.eval(x) / self.sigma2(x)

    def sigma_deriv(self, x):
        if self.diffusion.eval_deriv is None:
            raise ConfigurationError(
                "sigma' is required for this operation", model=self.name
            )
        return self.diffusion.eval_deriv(x)

    def require_lamperti(self) -> None:
        """Raise unless sigma' and the Lipschitz constant of f/sigma are declared."""
        if self.diffusion.eval_deriv is None:
            raise ConfigurationError("sigma' is required by the Lamperti chain", model=self.name)
        if self.fg_lipschitz_L is None:
            raise ConfigurationError("fg_lipschitz_L is required by the Lamperti chain", model=self.name)

    def with_n(self, n_obs: int) -> "ModelSpec":
        return self.model_copy(update={"n_obs": int(n_obs)})

    def with_epsilon(self, epsilon: float) -> "ModelSpec":
        return self.model_copy(update={"epsilon": float(epsilon)})

    def with_w(self, w: float) -> "ModelSpec":
        return self.model_copy(update={"w": float(w)})


class FineGridConfig(BaseModel):
    """
    Fine simulation grid: `steps_per_interval` fine steps per observation
    interval T/n, so the fine step is dt = T / (n * steps_per_interval).

    Constant-eps processes (the re-clocked ones) run on a longer span; when
    `horizon_multiplier` is left unset it defaults to sigma1^2 * (1 + margin).
    """

    steps_per_interval: int = Field(256, ge=1, description="Fine steps per T/n (power of two)")
    horizon_multiplier: Optional[float] = Field(None, ge=1, description="Span of constant-eps processes, in units of T")
    margin: float = Field(0.05, ge=0, description="Safety margin on sigma1^2 * T")
    index_convention: Literal["from_zero", "from_one"] = Field(
        "from_zero",
        description="First frozen interval of f_bar/sigma_bar: i=0 (default) or the literal i=1",
    )

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _power_of_two(self) -> "FineGridConfig":
        k = self.steps_per_interval
        if k & (k - 1):
            raise ValueError("steps_per_interval must be a power of two")
        return self

    def fine_dt(self, spec: ModelSpec) -> float:
        return spec.horizon_T / (spec.n_obs * self.steps_per_interval)

    def steps_on_horizon(self, spec: ModelSpec) -> int:
        return spec.n_obs * self.steps_per_interval

    def constant_eps_multiplier(self, spec: ModelSpec) -> float:
        needed = spec.diffusion.sigma1 ** 2
        if self.horizon_multiplier is None:
            return max(1.0, needed * (1.0 + self.margin))
        if self.horizon_multiplier < needed:
            raise ConfigurationError(
                "horizon_multiplier must be >= sigma1^2 for re-clocked processes",
                horizon_multiplier=self.horizon_multiplier,
                sigma1_squared=needed,
            )
        return self.horizon_multiplier

    def constant_eps_steps(self, spec: ModelSpec) -> int:
        """Fine steps covering sigma1^2 * T * (1 + margin), rounded up to whole observation intervals."""
        intervals = math.ceil(self.constant_eps_multiplier(spec) * spec.n_obs - 1e-9)
        return intervals * self.steps_per_interval

    def refined(self, factor: int = 2) -> "FineGridConfig":
        return self.model_copy(update={"steps_per_interval": self.steps_per_interval * factor})


class ExperimentId(StrEnum):
    """Experiment tags: the seven models of the first chain, six of the Lamperti chain, and the zeta-bar auxiliary."""

    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    M6 = "M6"
    M7 = "M7"
    N1 = "N1"
    N2 = "N2"
    N3 = "N3"
    N4 = "N4"
    N5 = "N5"
    N6 = "N6"
    ZETA_BAR = "zeta_bar"


class Violation(BaseModel):
    """One violated inequality with where it was observed."""

    constraint: str = Field(..., description="Which inequality failed, e.g. 'drift_lipschitz'")
    location: tuple[float, ...] = Field(..., description="Probe point or probe pair")
    measured: float = Field(..., description="Left-hand side observed")
    bound: float = Field(..., description="Declared right-hand side")


class ValidationReport(BaseModel):
    """Outcome of validate_model; empty `violations` means every probe check held."""

    model: str
    probe_count: int = Field(..., ge=2)
    probe_range: tuple[float, float]
    violations: list[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return f"{self.model}: no violations on {self.probe_count} probes in {self.probe_range}"
        lines = [f"{self.model}: {len(self.violations)} violation(s)"]
        for v in self.violations:
            loc = ", ".join(f"{p:.6g}" for p in v.location)
            lines.append(f"  {v.constraint} at ({loc}): {v.measured:.6g} > {v.bound:.6g}")
        return "\n".join(lines)
