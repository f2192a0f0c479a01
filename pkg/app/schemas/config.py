"""
Harness configuration schema.

`HarnessConfig` is the flat, validated form of an experiment config file:
model choice, sweep axes, run controls and threshold overrides. List fields
also accept comma-separated strings, which is how `--set` overrides arrive.
"""

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings

SUITE_NAMES = (
    "identities",
    "lemma1",
    "lemma2",
    "tv_bounds",
    "sufficiency",
    "lamperti",
    "euler_marginal",
    "girsanov",
    "moments",
    "kernel",
)

DEFAULT_THRESHOLDS: dict[str, float] = {
    # time-change identities
    "identities_paths": 200,
    "identities_rho_factor": 5.0,
    "identities_roundtrip_factor": 5.0,
    "refinement_ratio_lo": 1.5,
    "refinement_ratio_hi": 2.5,
    # two-sample tests
    "ks_alpha": 0.01,
    "spearman_alpha": 0.05,
    # rate brackets
    "lemma2_n_slope_lo": -1.3,
    "lemma2_n_slope_hi": -0.7,
    "lemma2_eps_slope_lo": 0.7,
    "lemma2_eps_slope_hi": 1.3,
    "lemma1_n_slope_lo": -2.4,
    "lemma1_n_slope_hi": -1.6,
    "lemma1_eps_slope_lo": 1.5,
    "lemma1_eps_slope_hi": 2.5,
    "lamperti_n_slope_lo": -1.4,
    "lamperti_n_slope_hi": -0.6,
    "lamperti_surrogate_slope_lo": -0.7,
    "lamperti_surrogate_slope_hi": -0.3,
    "lamperti_lipschitz_factor": 1.01,
    # Monte Carlo agreement, in standard errors
    "se_factor": 3.0,
    # exact identities
    "sufficiency_abs_tol": 1e-10,
    "sufficiency_vectors": 1000,
    # absolute-tolerance mode for quantities that vanish (constant sigma)
    "absolute_tol": 1e-9,
    # moment stability
    "moments_ratio_max": 2.0,
    # kernel extension
    "kernel_replicates": 2000,
}


def _split(v):
    if isinstance(v, str):
        # "a,b,c" -> ["a", "b", "c"]
        return [s.strip() for s in v.split(",") if s.strip()]
    return v


class HarnessConfig(BaseModel):
    model_name: str = Field("sin-drift", description="Builtin model name")
    model_params: dict[str, float] = Field(default_factory=dict, description="Shape-parameter overrides of the builtin")
    declared: dict[str, float] = Field(
        default_factory=dict, description="Overrides of declared constants only (M, origin_bound, sigma0, sigma1, K, L)"
    )
    T: float = Field(1.0, gt=0)
    w: float = 0.0
    epsilon: float = Field(0.1, gt=0, lt=1, description="Noise level for suites that do not sweep it")
    n: int = Field(32, ge=1, description="Observation count for suites that do not sweep it")
    sweep_n: list[int] = Field(default_factory=lambda: [8, 16, 32, 64])
    sweep_eps: list[float] = Field(default_factory=lambda: [0.02, 0.04, 0.08, 0.16])
    drift_gap_w: Optional[float] = Field(None, description="Initial point of the drift-gap n sweep; defaults to w")
    euler_n: list[int] = Field(default_factory=lambda: [8, 32, 128], description="n values of the Euler KS trend")
    pin_eps: float = Field(1e-6, gt=0, lt=1, description="eps used while sweeping n")
    pin_n: int = Field(512, ge=1, description="n used while sweeping eps")
    pin_steps_per_interval: int = Field(16, ge=1, description="Fine steps per interval at n = pin_n")
    replicates: int = Field(2000, ge=100)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0, lt=2**64)
    steps_per_interval: int = Field(64, ge=1)
    margin: float = Field(0.05, ge=0)
    index_convention: Literal["from_zero", "from_one"] = "from_zero"
    suites: list[str] = Field(default_factory=lambda: ["identities"])
    output_dir: str = "results"
    threads: Optional[int] = Field(None, ge=1)
    thresholds: dict[str, float] = Field(default_factory=dict)

    model_config = ConfigDict(extra="forbid")

    # comma-separated -> list
    @field_validator("sweep_n", "sweep_eps", "euler_n", "suites", mode="before")
    @classmethod
    def _split_lists(cls, v):
        return _split(v)

    @field_validator("sweep_n", "sweep_eps", "euler_n")
    @classmethod
    def _sorted_non_empty(cls, v):
        if not v:
            raise ValueError("sweep lists must be non-empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep lists must be strictly ascending")
        return v

    @field_validator("sweep_n", "euler_n")
    @classmethod
    def _positive_n(cls, v):
        if any(k < 1 for k in v):
            raise ValueError("n entries must be >= 1")
        return v

    @field_validator("sweep_eps")
    @classmethod
    def _eps_in_unit(cls, v):
        if any(not 0 < e < 1 for e in v):
            raise ValueError("sweep_eps entries must lie in (0, 1)")
        return v

    @field_validator("suites")
    @classmethod
    def _known_suites(cls, v):
        if not v:
            raise ValueError("at least one suite is required")
        unknown = [s for s in v if s not in SUITE_NAMES]
        if unknown:
            raise ValueError(f"unknown suite(s) {unknown}; known: {list(SUITE_NAMES)}")
        return v

    @field_validator("thresholds")
    @classmethod
    def _known_thresholds(cls, v):
        unknown = sorted(set(v) - set(DEFAULT_THRESHOLDS))
        if unknown:
            raise ValueError(f"unknown threshold(s) {unknown}")
        return v

    @field_validator("steps_per_interval", "pin_steps_per_interval")
    @classmethod
    def _power_of_two(cls, v):
        if v & (v - 1):
            raise ValueError("must be a power of two")
        return v

    @model_validator(mode="after")
    def _declared_keys(self) -> "HarnessConfig":
        allowed = {"M", "origin_bound", "sigma0", "sigma1", "K", "L"}
        unknown = sorted(set(self.declared) - allowed)
        if unknown:
            raise ValueError(f"unknown declared constant(s) {unknown}; allowed: {sorted(allowed)}")
        return self

    def threshold(self, key: str) -> float:
        return float(self.thresholds.get(key, DEFAULT_THRESHOLDS[key]))

    def effective_thresholds(self) -> dict[str, float]:
        return {k: self.threshold(k) for k in DEFAULT_THRESHOLDS}
