"""
Lamperti transform F(x) = int_0^x du / (eps*sigma(u)), its inverse, and the
unit-diffusion drift b(v) = (f/(eps*sigma))(F^-1 v) - eps*sigma'(F^-1 v)/2.

F is tabulated once per model: panel integrals by adaptive quadrature, then a
cubic Hermite interpolant through the knots with the exact slopes 1/(eps*sigma).
Outside the table both F and F^-1 extrapolate linearly with the end slopes.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from app.core.errors import ConfigurationError, ModelEvaluationError, ModelValidationError
from app.schemas.model import ModelSpec
from app.sde.paths import SamplePath

logger = logging.getLogger(__name__)

DEFAULT_KNOTS = 2049
PANEL_EPSABS = 1e-10
INVERSE_TOL = 1e-11
MAX_NEWTON = 60


@dataclass(frozen=True)
class TransformTable:
    """Tabulated F on [x_knots[0], x_knots[-1]]; F(0) = 0 and F is strictly increasing."""

    x_knots: np.ndarray
    F_values: np.ndarray
    epsilon: float
    extrapolation_slope_lo: float
    extrapolation_slope_hi: float
    forward: CubicHermiteSpline | PchipInterpolator = field(repr=False, compare=False)
    backward: CubicHermiteSpline | PchipInterpolator = field(repr=False, compare=False)
    _overruns: dict = field(default_factory=lambda: {"count": 0}, repr=False, compare=False)

    @property
    def x_range(self) -> tuple[float, float]:
        return float(self.x_knots[0]), float(self.x_knots[-1])

    @property
    def v_range(self) -> tuple[float, float]:
        return float(self.F_values[0]), float(self.F_values[-1])

    def _note_overrun(self, count: int, what: str) -> None:
        if count == 0:
            return
        first = self._overruns["count"] == 0
        self._overruns["count"] += count
        log = logger.warning if first else logger.debug
        log("%d %s value(s) outside the transform table %s; extrapolating linearly", count, what, self.x_range)

    def F(self, x):
        """F at x (scalar or array)."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_range
        inside = np.clip(x, lo, hi)
        out = self.forward(inside)
        below, above = x < lo, x > hi
        self._note_overrun(int(np.count_nonzero(below | above)), "state")
        out = np.where(below, self.F_values[0] + (x - lo) * self.extrapolation_slope_lo, out)
        out = np.where(above, self.F_values[-1] + (x - hi) * self.extrapolation_slope_hi, out)
        return float(out) if out.ndim == 0 else out


def default_range(spec: ModelSpec) -> tuple[float, float]:
    """[w - R, w + R] with R = (1 + |w| + M*T)*exp(M*T) + 10*eps*sigma1*sqrt(T)."""
    M, T = spec.drift.lipschitz_M, spec.horizon_T
    R = (1.0 + abs(spec.w) + M * T) * math.exp(M * T) + 10.0 * spec.epsilon * spec.diffusion.sigma1 * math.sqrt(T)
    return spec.w - R, spec.w + R


def _inv_scale(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    s = np.asarray(spec.sigma(x), dtype=float)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        bad = np.atleast_1d(~np.isfinite(s) | (s <= 0))
        point = float(np.atleast_1d(x)[np.argmax(bad)])
        raise ModelEvaluationError("model evaluation failure: sigma is not finite and positive", point=point)
    return 1.0 / (spec.epsilon * s)


def build_transform(
    spec: ModelSpec,
    x_range: tuple[float, float] | None = None,
    knot_count: int = DEFAULT_KNOTS,
) -> TransformTable:
    """
    Tabulate F for `spec` on `x_range` (default: `default_range`).

    Raises:
        ConfigurationError: knot_count < 2 or an empty range.
        ModelEvaluationError: sigma is not finite and positive at a knot.
        ModelValidationError: |b(0)| exceeds M/(eps*sigma0) + eps*K/2.
    """
    if knot_count < 2:
        raise ConfigurationError("knot_count must be >= 2", knot_count=knot_count)
    lo, hi = x_range if x_range is not None else default_range(spec)
    if not hi > lo:
        raise ConfigurationError("transform range must be non-degenerate", x_range=(lo, hi))
    lo, hi = min(lo, 0.0), max(hi, 0.0)

    x = np.union1d(np.linspace(lo, hi, knot_count), [0.0])
    slopes = _inv_scale(spec, x)

    def integrand(u: float) -> float:
        return float(_inv_scale(spec, np.asarray(u)))

    panels = np.array([
        quad(integrand, a, b, epsabs=PANEL_EPSABS, epsrel=1e-13, limit=200)[0]
        for a, b in zip(x[:-1], x[1:])
    ])
    zero = int(np.searchsorted(x, 0.0))
    F = np.empty_like(x)
    F[zero] = 0.0
    F[zero + 1:] = np.cumsum(panels[zero:])
    F[:zero] = -np.cumsum(panels[:zero][::-1])[::-1]

    forward = CubicHermiteSpline(x, F, slopes)
    probe = np.linspace(lo, hi, 8 * x.size)
    if np.any(np.diff(forward(probe)) <= 0):
        logger.warning("Hermite table for F is not monotone on %s; using PCHIP", (lo, hi))
        forward = PchipInterpolator(x, F)
        backward = PchipInterpolator(F, x)
    else:
        backward = CubicHermiteSpline(F, x, 1.0 / slopes)

    table = TransformTable(
        x_knots=x,
        F_values=F,
        epsilon=spec.epsilon,
        extrapolation_slope_lo=float(slopes[0]),
        extrapolation_slope_hi=float(slopes[-1]),
        forward=forward,
        backward=backward,
    )
    for arr in (table.x_knots, table.F_values):
        arr.setflags(write=False)

    if spec.diffusion.has_derivative:
        b0 = abs(float(drift_b(table, spec, table.F(0.0))))
        bound = b_origin_bound(spec)
        if b0 > bound * (1 + 1e-9) + 1e-12:
            raise ModelValidationError(f"|b(0)| = {b0:.6g} exceeds its bound {bound:.6g}")
    logger.debug("built transform table: %d knots on %s", x.size, (lo, hi))
    return table


def transform(table: TransformTable, x):
    return table.F(x)


def invert_transform(table: TransformTable, v):
    """
    F^-1(v), vectorised. Inside the table: inverse-spline start, then Newton
    safeguarded by the bracketing knots; outside: the linear extrapolation inverted.
    """
    v = np.asarray(v, dtype=float)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    F, xk = table.F_values, table.x_knots
    vlo, vhi = table.v_range
    below, above = v < vlo, v > vhi
    table._note_overrun(int(np.count_nonzero(below | above)), "transformed")

    vin = np.clip(v, vlo, vhi)
    j = np.clip(np.searchsorted(F, vin, side="right") - 1, 0, F.size - 2)
    a, b = xk[j].copy(), xk[j + 1].copy()
    x = np.clip(table.backward(vin), a, b)
    deriv = table.forward.derivative()
    for _ in range(MAX_NEWTON):
        r = table.forward(x) - vin
        done = (np.abs(r) <= INVERSE_TOL) | (b - a <= 4.0 * np.spacing(np.abs(x) + 1.0))
        if done.all():
            break
        a = np.where(r < 0, x, a)
        b = np.where(r > 0, x, b)
        step = r / deriv(x)
        nxt = x - step
        outside = (nxt <= a) | (nxt >= b) | ~np.isfinite(nxt)
        nxt = np.where(outside, 0.5 * (a + b), nxt)
        x = np.where(done, x, nxt)

    x = np.where(below, xk[0] + (v - vlo) / table.extrapolation_slope_lo, x)
    x = np.where(above, xk[-1] + (v - vhi) / table.extrapolation_slope_hi, x)
    return float(x[0]) if scalar else x


def drift_b(table: TransformTable, spec: ModelSpec, v):
    """b(v) = f(x)/(eps*sigma(x)) - eps*sigma'(x)/2 at x = F^-1(v)."""
    if spec.diffusion.eval_deriv is None:
        raise ConfigurationError("drift b needs sigma'", model=spec.name)
    if abs(table.epsilon - spec.epsilon) > 1e-15 * max(1.0, spec.epsilon):
        raise ConfigurationError("transform table built for another epsilon", table=table.epsilon, spec=spec.epsilon)
    x = invert_transform(table, v)
    eps = spec.epsilon
    return spec.f(x) / (eps * spec.sigma(x)) - 0.5 * eps * spec.sigma_deriv(x)


def b_origin_bound(spec: ModelSpec) -> float:
    """M/(eps*sigma0) + eps*K/2."""
    eps = spec.epsilon
    return spec.drift.lipschitz_M / (eps * spec.diffusion.sigma0) + 0.5 * eps * spec.diffusion.lipschitz_K


def b_lipschitz_bound(spec: ModelSpec) -> float:
    """(L/eps + K*eps/2) * sigma1 * eps; with K = M this is the M-form of the bound."""
    spec.require_lamperti()
    eps = spec.epsilon
    return (spec.fg_lipschitz_L / eps + 0.5 * spec.diffusion.lipschitz_K * eps) * spec.diffusion.sigma1 * eps


def empirical_b_lipschitz(
    table: TransformTable, spec: ModelSpec, pairs: int = 10_000, seed: int = 0
) -> float:
    """Largest |b(u) - b(v)|/|u - v| over random probe pairs inside the table."""
    rng = np.random.default_rng(seed)
    vlo, vhi = table.v_range
    u = rng.uniform(vlo, vhi, pairs)
    gap = rng.uniform(1e-3, 1.0, pairs) * (vhi - vlo) * 1e-2
    v = np.minimum(u + gap, vhi)
    keep = v > u
    u, v = u[keep], v[keep]
    return float(np.max(np.abs(drift_b(table, spec, v) - drift_b(table, spec, u)) / (v - u)))


def transform_path(table: TransformTable, path: SamplePath) -> SamplePath:
    """Pointwise F of a path, on the same grid."""
    return SamplePath(path.t0, path.dt, table.F(path.values))
