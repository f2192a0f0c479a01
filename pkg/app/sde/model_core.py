"""
Model ingredients: probe-grid validation of the drift class F_M and of the
diffusion assumptions, plus the builtin library of (f, sigma) pairs.

Membership in F_M is only certified on a finite probe grid; the declared
constants are inputs and are checked, never inferred.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from app.core.errors import ConfigurationError, ModelEvaluationError, ModelValidationError
from app.schemas.model import DiffusionSpec, DriftSpec, ModelSpec, ValidationReport, Violation

logger = logging.getLogger(__name__)

RTOL = 1e-9
ATOL = 1e-12
FD_STEP = 1e-5
FD_TOL = 1e-6


def _exceeds(measured: np.ndarray, bound: np.ndarray | float) -> np.ndarray:
    return measured > np.asarray(bound) * (1.0 + RTOL) + ATOL


def _evaluate(fn: Callable, probes: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(fn(probes), dtype=float)
    if values.shape != probes.shape:
        values = np.broadcast_to(values, probes.shape).astype(float)
    bad = ~np.isfinite(values)
    if bad.any():
        point = float(probes[np.argmax(bad)])
        raise ModelEvaluationError(f"model evaluation failure: {what} is not finite", point=point)
    return values


def _worst(mask: np.ndarray, excess: np.ndarray) -> int:
    return int(np.argmax(np.where(mask, excess, -np.inf)))


def _adjacent_lipschitz(
    probes: np.ndarray, values: np.ndarray, bound: float, constraint: str
) -> list[Violation]:
    # over sampled values the largest chord slope is always an adjacent one
    slopes = np.abs(np.diff(values)) / np.diff(probes)
    mask = _exceeds(slopes, bound)
    if not mask.any():
        return []
    k = _worst(mask, slopes - bound)
    return [Violation(
        constraint=constraint,
        location=(float(probes[k]), float(probes[k + 1])),
        measured=float(slopes[k]),
        bound=bound,
    )]


def validate_model(
    spec: ModelSpec,
    probe_count: int = 10_000,
    probe_range: tuple[float, float] = (-20.0, 20.0),
    check_derivative: bool = True,
) -> ValidationReport:
    """
    Check the declared constants of `spec` on a uniform probe grid.

    Checks |f(0)| <= M, |f(0)| <= origin_bound, M-Lipschitz f, linear growth,
    sigma0^2 <= sigma^2 <= sigma1^2, K-Lipschitz sigma, and when present a
    K-Lipschitz sigma' consistent with a central difference of sigma and an
    L-Lipschitz f/sigma. Each failed check contributes its worst probe.

    Raises:
        ConfigurationError: probe_count < 2 or a degenerate probe range.
        ModelEvaluationError: a model function is not finite at a probe.
    """
    lo, hi = float(probe_range[0]), float(probe_range[1])
    if probe_count < 2:
        raise ConfigurationError("probe_count must be >= 2", probe_count=probe_count)
    if not hi > lo:
        raise ConfigurationError("probe_range must be non-degenerate", probe_range=probe_range)

    probes = np.linspace(lo, hi, probe_count)
    drift, diffusion = spec.drift, spec.diffusion
    M, K = drift.lipschitz_M, diffusion.lipschitz_K
    violations: list[Violation] = []

    f0 = float(_evaluate(drift.eval, np.zeros(1), "f")[0])
    for name, bound in (("drift_origin_M", M), ("drift_origin_declared", drift.origin_bound)):
        if _exceeds(np.array(abs(f0)), bound):
            violations.append(Violation(constraint=name, location=(0.0,), measured=abs(f0), bound=bound))

    f = _evaluate(drift.eval, probes, "f")
    violations += _adjacent_lipschitz(probes, f, M, "drift_lipschitz")

    growth = M * (1.0 + np.abs(probes))
    mask = _exceeds(np.abs(f), growth)
    if mask.any():
        k = _worst(mask, np.abs(f) - growth)
        violations.append(Violation(
            constraint="drift_linear_growth", location=(float(probes[k]),),
            measured=float(abs(f[k])), bound=float(growth[k]),
        ))

    sigma = _evaluate(diffusion.eval, probes, "sigma")
    s2 = sigma * sigma
    upper, lower = diffusion.sigma1 ** 2, diffusion.sigma0 ** 2
    mask = _exceeds(s2, upper)
    if mask.any():
        k = _worst(mask, s2 - upper)
        violations.append(Violation(
            constraint="sigma_upper", location=(float(probes[k]),), measured=float(s2[k]), bound=upper,
        ))
    mask = _exceeds(np.full_like(s2, lower), s2)
    if mask.any():
        k = _worst(mask, lower - s2)
        # reported as lower/sigma^2 > 1 so measured > bound reads the same way
        violations.append(Violation(
            constraint="sigma_lower", location=(float(probes[k]),), measured=lower, bound=float(s2[k]),
        ))
    violations += _adjacent_lipschitz(probes, sigma, K, "sigma_lipschitz")

    if diffusion.eval_deriv is not None:
        deriv = _evaluate(diffusion.eval_deriv, probes, "sigma'")
        violations += _adjacent_lipschitz(probes, deriv, K, "sigma_deriv_lipschitz")
        if check_derivative:
            fd = (_evaluate(diffusion.eval, probes + FD_STEP, "sigma")
                  - _evaluate(diffusion.eval, probes - FD_STEP, "sigma")) / (2.0 * FD_STEP)
            gap = np.abs(fd - deriv)
            mask = gap > FD_TOL
            if mask.any():
                k = _worst(mask, gap)
                violations.append(Violation(
                    constraint="sigma_deriv_mismatch", location=(float(probes[k]),),
                    measured=float(gap[k]), bound=FD_TOL,
                ))

    if spec.fg_lipschitz_L is not None:
        violations += _adjacent_lipschitz(probes, f / sigma, spec.fg_lipschitz_L, "f_over_sigma_lipschitz")

    report = ValidationReport(
        model=spec.name, probe_count=probe_count, probe_range=(lo, hi), violations=violations
    )
    if report.ok:
        logger.debug("model %s validated on %d probes", spec.name, probe_count)
    else:
        logger.warning("model %s failed validation: %d violation(s)", spec.name, len(violations))
    return report


def require_valid(spec: ModelSpec, **kwargs: Any) -> ValidationReport:
    """validate_model, raising ModelValidationError when anything is violated."""
    report = validate_model(spec, **kwargs)
    if not report.ok:
        raise ModelValidationError(report.summary(), report=report)
    return report


# ---------------------------
# Builtin library
# ---------------------------

@dataclass(frozen=True)
class LibraryEntry:
    """A named (drift, diffusion) pair with its declared constants."""

    name: str
    drift: DriftSpec
    diffusion: DiffusionSpec
    fg_lipschitz_L: float | None = None
    params: dict[str, float] = field(default_factory=dict)

    def build(self, epsilon: float, horizon_T: float, n_obs: int, w: float = 0.0) -> ModelSpec:
        return build_model(self, epsilon=epsilon, horizon_T=horizon_T, n_obs=n_obs, w=w)


def zero_drift(M: float = 1.0) -> DriftSpec:
    return DriftSpec(name="zero", eval=np.zeros_like, lipschitz_M=M, origin_bound=0.0)


def constant_drift(c: float = 1.0, M: float | None = None) -> DriftSpec:
    M = max(abs(c), 1e-12) if M is None else M
    return DriftSpec(
        name=f"constant({c:g})",
        eval=lambda x: np.full_like(np.asarray(x, dtype=float), c),
        lipschitz_M=M,
        origin_bound=abs(c),
    )


def clipped_linear_drift(a: float = 1.0, b: float = 0.5, clip: float = 2.0) -> DriftSpec:
    lo, hi = -abs(clip), abs(clip)
    f0 = float(np.clip(b, lo, hi))
    M = max(abs(a), abs(f0), 1e-12)
    return DriftSpec(
        name=f"clip({a:g}x+{b:g},{clip:g})",
        eval=lambda x: np.clip(a * np.asarray(x, dtype=float) + b, lo, hi),
        lipschitz_M=M,
        origin_bound=abs(f0),
    )


def sin_drift(scale: float = 1.0) -> DriftSpec:
    M = max(abs(scale), 1e-12)
    return DriftSpec(name="sin", eval=lambda x: scale * np.sin(x), lipschitz_M=M, origin_bound=0.0)


def tanh_drift(amplitude: float = 2.0, offset: float = 0.5) -> DriftSpec:
    M = max(abs(amplitude), abs(offset), 1e-12)
    return DriftSpec(
        name="tanh",
        eval=lambda x: amplitude * np.tanh(x) + offset,
        lipschitz_M=M,
        origin_bound=abs(offset),
    )


def constant_sigma(c: float = 1.0) -> DiffusionSpec:
    return DiffusionSpec(
        name=f"constant({c:g})",
        eval=lambda x: np.full_like(np.asarray(x, dtype=float), c),
        eval_deriv=np.zeros_like,
        sigma0=c,
        sigma1=c,
        lipschitz_K=0.0,
    )


def half_sin_sigma(base: float = 1.0, amplitude: float = 0.5) -> DiffusionSpec:
    """sigma = base + amplitude*sin; amplitude < base keeps it bounded away from zero."""
    if abs(amplitude) >= base:
        raise ConfigurationError("half_sin_sigma needs |amplitude| < base", base=base, amplitude=amplitude)
    a = abs(amplitude)
    return DiffusionSpec(
        name=f"{base:g}+{amplitude:g}sin",
        eval=lambda x: base + amplitude * np.sin(x),
        eval_deriv=lambda x: amplitude * np.cos(x),
        sigma0=base - a,
        sigma1=base + a,
        lipschitz_K=max(a, 1e-12),
    )


def tanh_sigma(sigma0: float = 1.0, sigma1: float = 2.0, slope: float = 0.4) -> DiffusionSpec:
    """sigma = (sigma0+sigma1)/2 + slope*tanh, with |slope| <= (sigma1-sigma0)/2."""
    mid = 0.5 * (sigma0 + sigma1)
    if abs(slope) > 0.5 * (sigma1 - sigma0):
        raise ConfigurationError("tanh_sigma slope leaves [sigma0, sigma1]", slope=slope)
    # |d/dx tanh'(x)| peaks at 4/(3*sqrt(3)) < 1, so K = |slope| covers sigma and sigma'
    return DiffusionSpec(
        name="tanh-sigma",
        eval=lambda x: mid + slope * np.tanh(x),
        eval_deriv=lambda x: slope / np.cosh(x) ** 2,
        sigma0=sigma0,
        sigma1=sigma1,
        lipschitz_K=max(abs(slope), 1e-12),
    )


def _zero_drift_entry(p: dict[str, float]) -> LibraryEntry:
    return LibraryEntry(
        "zero-drift", zero_drift(p.get("M", 1.0)), constant_sigma(p.get("sigma_c", 1.0)),
        fg_lipschitz_L=p.get("L", 1.0),
    )


def _const_drift_entry(p: dict[str, float]) -> LibraryEntry:
    c = p.get("c", 1.0)
    return LibraryEntry(
        "const-drift", constant_drift(c), constant_sigma(p.get("sigma_c", 1.0)),
        fg_lipschitz_L=p.get("L", 1.0),
    )


def _clipped_linear_entry(p: dict[str, float]) -> LibraryEntry:
    return LibraryEntry(
        "clipped-linear-drift",
        clipped_linear_drift(p.get("a", 1.0), p.get("b", 0.5), p.get("clip", 2.0)),
        half_sin_sigma(1.0, p.get("amplitude", 0.5)),
        fg_lipschitz_L=p.get("L", 6.0),
    )


def _sin_drift_entry(p: dict[str, float]) -> LibraryEntry:
    # |(sin/(1+sin/2))'| = |cos|/(1+sin/2)^2 peaks near 1.69
    return LibraryEntry(
        "sin-drift", sin_drift(p.get("scale", 1.0)), half_sin_sigma(1.0, p.get("amplitude", 0.5)),
        fg_lipschitz_L=p.get("L", 2.0),
    )


def _tanh_drift_entry(p: dict[str, float]) -> LibraryEntry:
    return LibraryEntry(
        "tanh-drift",
        tanh_drift(p.get("amplitude", 2.0), p.get("offset", 0.5)),
        tanh_sigma(p.get("sigma0", 1.0), p.get("sigma1", 2.0), p.get("slope", 0.4)),
        fg_lipschitz_L=p.get("L", 3.0),
    )


def _unit_sigma_entry(p: dict[str, float]) -> LibraryEntry:
    return LibraryEntry(
        "unit-sigma", sin_drift(p.get("scale", 1.0)), constant_sigma(1.0),
        fg_lipschitz_L=p.get("L", 1.0),
    )


def _const_sigma_entry(p: dict[str, float]) -> LibraryEntry:
    c = p.get("sigma_c", 2.0)
    return LibraryEntry(
        "const-sigma", sin_drift(p.get("scale", 1.0)), constant_sigma(c),
        fg_lipschitz_L=p.get("L", max(1.0 / c, 1e-12)),
    )


def _tanh_sigma_entry(p: dict[str, float]) -> LibraryEntry:
    # |(sin/sigma)'| <= 1/1.1 + 0.4/1.21
    return LibraryEntry(
        "tanh-sigma",
        sin_drift(p.get("scale", 1.0)),
        tanh_sigma(p.get("sigma0", 1.0), p.get("sigma1", 2.0), p.get("slope", 0.4)),
        fg_lipschitz_L=p.get("L", 1.5),
    )


_BUILDERS: dict[str, Callable[[dict[str, float]], LibraryEntry]] = {
    "zero-drift": _zero_drift_entry,
    "const-drift": _const_drift_entry,
    "clipped-linear-drift": _clipped_linear_entry,
    "sin-drift": _sin_drift_entry,
    "tanh-drift": _tanh_drift_entry,
    "unit-sigma": _unit_sigma_entry,
    "const-sigma": _const_sigma_entry,
    "tanh-sigma": _tanh_sigma_entry,
}


def builtin_library() -> list[LibraryEntry]:
    """Every builtin pair with its default parameters."""
    return [builder({}) for builder in _BUILDERS.values()]


def builtin_names() -> list[str]:
    return list(_BUILDERS)


def lookup(name: str, **overrides: float) -> LibraryEntry:
    """
    Builtin pair by name, with numeric overrides of its shape parameters
    (c, a, b, clip, scale, amplitude, offset, sigma_c, sigma0, sigma1, slope, M, L).

    Raises:
        ConfigurationError: unknown name.
    """
    try:
        builder = _BUILDERS[name.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"unknown builtin model '{name}'", known=builtin_names()) from None
    params = {k: float(v) for k, v in overrides.items()}
    entry = builder(params)
    return LibraryEntry(entry.name, entry.drift, entry.diffusion, entry.fg_lipschitz_L, params)


def with_declared(entry: LibraryEntry, **declared: float) -> LibraryEntry:
    """
    Replace declared constants (M, origin_bound, sigma0, sigma1, K, L) and keep
    the functions; whether the new declarations hold is for validate_model to say.
    """
    drift_update = {k2: float(declared[k1]) for k1, k2 in (("M", "lipschitz_M"), ("origin_bound", "origin_bound"))
                    if k1 in declared}
    diff_update = {k2: float(declared[k1]) for k1, k2 in (("sigma0", "sigma0"), ("sigma1", "sigma1"), ("K", "lipschitz_K"))
                   if k1 in declared}
    return LibraryEntry(
        entry.name,
        entry.drift.model_copy(update=drift_update),
        entry.diffusion.model_copy(update=diff_update),
        float(declared["L"]) if "L" in declared else entry.fg_lipschitz_L,
        entry.params,
    )


def build_model(
    entry: LibraryEntry,
    epsilon: float,
    horizon_T: float,
    n_obs: int,
    w: float = 0.0,
) -> ModelSpec:
    return ModelSpec(
        name=entry.name,
        drift=entry.drift,
        diffusion=entry.diffusion,
        epsilon=epsilon,
        horizon_T=horizon_T,
        n_obs=n_obs,
        w=w,
        fg_lipschitz_L=entry.fg_lipschitz_L,
    )


def is_zero_drift(spec: ModelSpec, probe_range: tuple[float, float] = (-20.0, 20.0)) -> bool:
    probes = np.linspace(probe_range[0], probe_range[1], 257)
    return bool(np.all(np.asarray(spec.f(probes)) == 0.0))


def is_constant_sigma(spec: ModelSpec) -> bool:
    return spec.diffusion.sigma0 == spec.diffusion.sigma1
