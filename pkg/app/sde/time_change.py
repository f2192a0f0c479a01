"""
Clock functionals of a path and the re-clocking maps built on them.

    rho_s   = int_0^s sigma^2(x_r) dr        eta_t = inf{s : rho_s >= t}
    theta_s = int_0^s sigma^-2(x_r) dr      A_t   = inf{s : theta_s >= t}

Integrals are trapezoid accumulators on the path's fine grid; inverses bracket
the level monotonically and interpolate linearly inside the bracketing step.
The discrete clock A_bar^n follows its exact piecewise-linear recursion.

Single-path operations return `ClockResult`/`StoppedPath`; the batched
`ClockAccumulator` and `a_bar_knots_batch` serve the Monte Carlo estimators and
mark unreachable levels with NaN instead of raising.
"""

import logging
import math
from dataclasses import dataclass
from app.core.compat import StrEnum

import numpy as np
from scipy.integrate import cumulative_trapezoid

from app.core.errors import ClockOverrun, ConfigurationError
from app.schemas.model import ModelSpec
from app.schemas.results import ClockKind, ClockResult
from app.sde import lamperti
from app.sde.brownian import BrownianDriver, Lane
from app.sde.paths import SNAP, KnotPath, PathBundle, SamplePath, StopKind, StoppedPath, interp_uniform

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12
BOUND_RTOL = 1e-9


# ---------------------------
# Accumulators and inverses
# ---------------------------

def _accumulate(values: np.ndarray, dt: float) -> np.ndarray:
    return cumulative_trapezoid(values, dx=dt, axis=-1, initial=0.0)


def _inverse_row(cum: np.ndarray, t0: float, dt: float, levels: np.ndarray) -> np.ndarray:
    """First crossing of each level by the non-decreasing `cum`; NaN when never reached."""
    levels = np.asarray(levels, dtype=float)
    k = np.searchsorted(cum, levels, side="left")
    out = np.full(levels.shape, np.nan)
    at_start = levels <= cum[0]
    out[at_start] = t0
    inside = ~at_start & (k < cum.size)
    if inside.any():
        kk = k[inside]
        lo, hi = cum[kk - 1], cum[kk]
        frac = (levels[inside] - lo) / (hi - lo)
        out[inside] = t0 + (kk - 1 + frac) * dt
    return out


def _inverse_knots(cum: np.ndarray, knots: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """As `_inverse_row` for an accumulator on uneven knots."""
    levels = np.asarray(levels, dtype=float)
    k = np.searchsorted(cum, levels, side="left")
    out = np.full(levels.shape, np.nan)
    at_start = levels <= cum[0]
    out[at_start] = knots[0]
    inside = ~at_start & (k < cum.size)
    if inside.any():
        kk = k[inside]
        frac = (levels[inside] - cum[kk - 1]) / (cum[kk] - cum[kk - 1])
        out[inside] = knots[kk - 1] + frac * (knots[kk] - knots[kk - 1])
    return out


def _check_bounds(kind: ClockKind, query: float, value: float, spec: ModelSpec) -> None:
    s0, s1 = spec.diffusion.sigma0 ** 2, spec.diffusion.sigma1 ** 2
    ranges = {
        ClockKind.RHO: (query * s0, query * s1),
        ClockKind.THETA: (query / s1, query / s0),
        ClockKind.ETA: (query / s1, query / s0),
        ClockKind.A: (query * s0, query * s1),
        ClockKind.A_BAR_N: (query * s0, query * s1),
    }
    lo, hi = ranges[kind]
    tol = BOUND_RTOL * max(1.0, hi) + 1e-12
    assert lo - tol <= value <= hi + tol, f"{kind} = {value} outside [{lo}, {hi}]"


class ClockAccumulator:
    """rho and theta accumulators of every row of a bundle, built lazily."""

    def __init__(self, bundle: PathBundle, spec: ModelSpec) -> None:
        self.bundle = bundle
        self.spec = spec
        self._rho: np.ndarray | None = None
        self._theta: np.ndarray | None = None

    @property
    def rho_cum(self) -> np.ndarray:
        if self._rho is None:
            self._rho = _accumulate(self.spec.sigma2(self.bundle.values), self.bundle.dt)
        return self._rho

    @property
    def theta_cum(self) -> np.ndarray:
        if self._theta is None:
            self._theta = _accumulate(1.0 / self.spec.sigma2(self.bundle.values), self.bundle.dt)
        return self._theta

    def _forward(self, cum: np.ndarray, t) -> np.ndarray:
        b = self.bundle
        t = np.broadcast_to(np.asarray(t, dtype=float), (b.replicates,))
        if np.any(t > b.t_end + SNAP * b.dt):
            raise ClockOverrun("clock query beyond the path span", requested=float(np.max(t)), reached=b.t_end)
        return interp_uniform(cum, b.t0, b.dt, t)

    def _inverse(self, cum: np.ndarray, level) -> np.ndarray:
        b = self.bundle
        level = np.broadcast_to(np.asarray(level, dtype=float), (b.replicates,))
        out = np.empty(b.replicates)
        for r in range(b.replicates):
            out[r] = _inverse_row(cum[r], b.t0, b.dt, level[r : r + 1])[0]
        return out

    def rho(self, t) -> np.ndarray:
        return self._forward(self.rho_cum, t)

    def theta(self, t) -> np.ndarray:
        return self._forward(self.theta_cum, t)

    def eta(self, level) -> np.ndarray:
        return self._inverse(self.rho_cum, level)

    def a(self, level) -> np.ndarray:
        return self._inverse(self.theta_cum, level)


# ---------------------------
# Discrete clock A_bar^n
# ---------------------------

def a_bar_knots_batch(bundle: PathBundle, spec: ModelSpec) -> np.ndarray:
    """
    Knots A_bar^n_{t_i}, i = 0..n, of every row: A_bar_0 = 0 and
    A_bar_{t_{i+1}} = A_bar_{t_i} + sigma^2(x(A_bar_{t_i})) * T/n.
    A knot whose predecessor lies beyond the span is NaN, as is everything after it.
    """
    n, delta = spec.n_obs, spec.dt_obs
    R = bundle.replicates
    knots = np.full((R, n + 1), np.nan)
    knots[:, 0] = bundle.t0
    current = np.full(R, bundle.t0)
    reach = bundle.t_end + SNAP * bundle.dt
    for i in range(n):
        ok = current <= reach
        safe = np.where(ok, np.minimum(current, bundle.t_end), bundle.t0)
        x = interp_uniform(bundle.values, bundle.t0, bundle.dt, safe)
        current = np.where(ok, current + spec.sigma2(x) * delta, np.nan)
        knots[:, i + 1] = current
    return knots


def a_bar_knots(path: SamplePath, spec: ModelSpec) -> np.ndarray:
    """Knots of A_bar^n on one path. Raises ClockOverrun when a needed knot is beyond the span."""
    knots = a_bar_knots_batch(PathBundle.from_path(path), spec)[0]
    if np.isnan(knots).any():
        last = int(np.argmax(np.isnan(knots))) - 1
        raise ClockOverrun("A_bar^n knot beyond the path span", requested=float(knots[last]), reached=path.t_end)
    return knots


def a_bar_n(path: SamplePath, spec: ModelSpec, t: float) -> ClockResult:
    """A_bar^n_t for t in [0, T] by the piecewise-linear recursion."""
    T, n, delta = spec.horizon_T, spec.n_obs, spec.dt_obs
    if not -SNAP <= t <= T * (1 + SNAP):
        raise ConfigurationError("A_bar^n is defined on [0, T]", t=t, T=T)
    knots = a_bar_knots(path, spec)
    pos = t / delta
    i = min(int(math.floor(pos + SNAP)), n - 1)
    slope = (knots[i + 1] - knots[i]) / delta
    value = float(knots[i] + slope * (t - i * delta)) if t > i * delta else float(knots[i])
    if __debug__:
        _check_bounds(ClockKind.A_BAR_N, t, value, spec)
    return ClockResult(kind=ClockKind.A_BAR_N, query_time=max(t, 0.0), value=max(value, 0.0))


# ---------------------------
# Single-path clock
# ---------------------------

def _grid_clock(path: SamplePath, spec: ModelSpec, kind: ClockKind, query_time: float) -> tuple[float, float]:
    acc = ClockAccumulator(PathBundle.from_path(path), spec)
    cum = acc.rho_cum if kind in (ClockKind.RHO, ClockKind.ETA) else acc.theta_cum
    if kind in (ClockKind.RHO, ClockKind.THETA):
        return float(acc._forward(cum, query_time)[0]), float(cum[0, -1])
    return float(acc._inverse(cum, query_time)[0]), float(cum[0, -1])


def _knot_clock(path: KnotPath, spec: ModelSpec, kind: ClockKind, query_time: float) -> tuple[float, float]:
    s2 = spec.sigma2(path.values)
    cum = cumulative_trapezoid(s2 if kind in (ClockKind.RHO, ClockKind.ETA) else 1.0 / s2, x=path.knots, initial=0.0)
    if kind in (ClockKind.RHO, ClockKind.THETA):
        if query_time > path.t_end + SNAP * path.dt:
            raise ClockOverrun("clock query beyond the path span", requested=query_time, reached=path.t_end)
        return float(np.interp(query_time, path.knots, cum)), float(cum[-1])
    return float(_inverse_knots(cum, path.knots, np.array([query_time]))[0]), float(cum[-1])


def clock(
    path: SamplePath | KnotPath, spec: ModelSpec, kind: ClockKind | str, query_time: float, strict: bool = True
) -> ClockResult:
    """
    Evaluate one clock functional at `query_time`.

    With strict=False an unreached inverse level returns the span end with
    path_span_ok=False instead of raising.

    Raises:
        ClockOverrun: forward query beyond the span, or (strict) inverse level not reached.
    """
    kind = ClockKind(kind)
    if kind is ClockKind.A_BAR_N:
        if isinstance(path, KnotPath):
            raise ConfigurationError("A_bar^n needs a path on the uniform fine grid")
        return a_bar_n(path, spec, query_time)
    if query_time < 0:
        raise ConfigurationError("query_time must be non-negative", query_time=query_time)

    measure = _knot_clock if isinstance(path, KnotPath) else _grid_clock
    value, reached = measure(path, spec, kind, query_time)
    span_ok = True
    if math.isnan(value):
        if strict:
            raise ClockOverrun(f"{kind} level not reached within the path span", requested=query_time, reached=reached)
        value, span_ok = path.t_end, False
    if __debug__ and span_ok:
        _check_bounds(kind, query_time, value, spec)
    return ClockResult(kind=kind, query_time=query_time, value=max(value, 0.0), path_span_ok=span_ok)


# ---------------------------
# Piecewise-constant coefficients
# ---------------------------

class CoeffKind(StrEnum):
    F_BAR_N = "f_bar_n"
    SIGMA_BAR_N = "sigma_bar_n"
    G_BAR_N = "g_bar_n"
    B_BAR_N = "b_bar_n"


@dataclass(frozen=True)
class PiecewiseCoeff:
    """
    levels[i] on the i-th interval between consecutive knots. `__call__`
    follows the indicator sets: [t_i, t_{i+1}) for f_bar_n and sigma_bar_n,
    (t_i, t_{i+1}] for g_bar_n and b_bar_n, zero outside.
    `right_continuous` is the a.e.-equal version used inside integrals.
    """

    kind: CoeffKind
    knots: np.ndarray
    levels: np.ndarray

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float)
        levels = np.asarray(self.levels, dtype=float)
        if knots.ndim != 1 or levels.shape != (knots.size - 1,):
            raise ConfigurationError("levels must have one entry per interval", knots=knots.size, levels=levels.size)
        if np.any(np.diff(knots) <= 0):
            raise ConfigurationError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "levels", levels)

    @property
    def left_closed(self) -> bool:
        return self.kind in (CoeffKind.F_BAR_N, CoeffKind.SIGMA_BAR_N)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        side = "right" if self.left_closed else "left"
        i = np.searchsorted(self.knots, t, side=side) - 1
        valid = (i >= 0) & (i < self.levels.size)
        out = np.where(valid, self.levels[np.clip(i, 0, self.levels.size - 1)], 0.0)
        return float(out) if out.ndim == 0 else out

    def right_continuous(self, t):
        """Level of [knots[i], knots[i+1]); the last level also covers knots[-1]."""
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self.levels.size - 1)
        out = self.levels[i]
        return float(out) if np.ndim(out) == 0 else out


def piecewise_coeffs(
    path: SamplePath,
    spec: ModelSpec,
    kind: CoeffKind | str,
    table: lamperti.TransformTable | None = None,
    index_convention: str = "from_zero",
) -> PiecewiseCoeff:
    """
    Frozen coefficients of `path`: f_bar_n, sigma_bar_n, b_bar_n on the
    observation grid, g_bar_n on the A_bar^n knots. For b_bar_n the path is a
    unit-diffusion (Lamperti) path. With index_convention="from_one" the first
    observation interval carries a zero level for f_bar_n and sigma_bar_n.
    """
    kind = CoeffKind(kind)
    if kind is CoeffKind.G_BAR_N:
        knots = a_bar_knots(path, spec)
        levels = spec.f_over_sigma2(path.value_at(knots[:-1]))
        return PiecewiseCoeff(kind, knots, np.asarray(levels, dtype=float))

    knots = spec.obs_grid()
    x = np.asarray(path.value_at(knots[:-1]), dtype=float)
    if kind is CoeffKind.F_BAR_N:
        levels = np.asarray(spec.f(x), dtype=float).copy()
    elif kind is CoeffKind.SIGMA_BAR_N:
        levels = np.asarray(spec.sigma(x), dtype=float).copy()
    else:
        table = table if table is not None else lamperti.build_transform(spec)
        levels = np.asarray(lamperti.drift_b(table, spec, x), dtype=float)
    if index_convention == "from_one" and kind in (CoeffKind.F_BAR_N, CoeffKind.SIGMA_BAR_N):
        levels[0] = 0.0
    return PiecewiseCoeff(kind, knots, levels)


# ---------------------------
# Stopping times
# ---------------------------

def stopping_time(path: SamplePath, spec: ModelSpec, kind: StopKind | str) -> float:
    """A_T, A_bar_T^n, S_T^n = A_T ^ A_bar_T^n (ties within 1e-12 go to A_T), or T."""
    kind = StopKind(kind)
    T = spec.horizon_T
    if kind is StopKind.FIXED_T:
        return T
    if kind is StopKind.A_T:
        return clock(path, spec, ClockKind.A, T).value
    a_bar = float(a_bar_knots(path, spec)[-1])
    if kind is StopKind.A_BAR_T_N:
        return a_bar
    a_t = clock(path, spec, ClockKind.A, T).value
    return a_t if a_t <= a_bar + TIE_TOL else a_bar


def stop_path(path: SamplePath, spec: ModelSpec, kind: StopKind | str) -> StoppedPath:
    kind = StopKind(kind)
    return StoppedPath(path, stopping_time(path, spec, kind), kind)


def stopping_times_batch(bundle: PathBundle, spec: ModelSpec, kind: StopKind | str) -> np.ndarray:
    """Per-row stopping times; NaN where the span does not reach them."""
    kind = StopKind(kind)
    T = spec.horizon_T
    if kind is StopKind.FIXED_T:
        return np.full(bundle.replicates, T)
    a_t = ClockAccumulator(bundle, spec).a(T) if kind is not StopKind.A_BAR_T_N else None
    if kind is StopKind.A_T:
        return a_t
    a_bar = a_bar_knots_batch(bundle, spec)[:, -1]
    if kind is StopKind.A_BAR_T_N:
        return a_bar
    return np.where(a_t <= a_bar + TIE_TOL, a_t, a_bar)


# ---------------------------
# Re-clocking maps
# ---------------------------

def _up_to(path: SamplePath, t_end: float) -> SamplePath:
    if path.t_end <= t_end * (1 + SNAP):
        return path
    return path.head(path.index_of(t_end))


def phi_map(path_on_0T: SamplePath, spec: ModelSpec, on_grid: bool = False) -> StoppedPath:
    """
    Phi(x)(u) = x(eta_u(x)) for u in [0, rho_T(x)], kept on the images u_k of
    the fine knots s_k of x, so that Phi(x)(u_k) = x(s_k) exactly.

    The spacing u_{k+1} - u_k = dt / mean(sigma^-2(x_k), sigma^-2(x_{k+1})) is
    a harmonic-mean step of rho, the one whose theta trapezoid gives back dt;
    psi_map therefore lands on the s-grid knot for knot. stop_time = u_K.

    on_grid=True resamples onto the uniform grid of x instead (O(dt) in the
    round trip), holding the last value over the final partial step.
    """
    path = _up_to(path_on_0T, spec.horizon_T)
    inv = 1.0 / spec.sigma2(path.values)
    du = path.dt / (0.5 * (inv[:-1] + inv[1:]))
    u = np.concatenate([[0.0], np.cumsum(du)])
    knots = KnotPath(u, path.values)
    stop = float(u[-1])
    if not on_grid:
        return StoppedPath(knots, stop, StopKind.A_T)
    steps = max(1, math.ceil(stop / path.dt - SNAP))
    t = np.minimum(np.arange(steps + 1) * path.dt, stop)
    return StoppedPath(SamplePath(0.0, path.dt, knots.value_at(t)), stop, StopKind.A_T)


def psi_map(stopped: StoppedPath, spec: ModelSpec, step: float | None = None) -> SamplePath:
    """
    Psi(x)(t) = x(A_t(x)) for t in [0, T] on a uniform grid of `step`: by
    default the path's fine step, or T/steps for the knot path phi_map returns.
    A theta that falls short of T by at most SNAP * T counts as reaching it.

    Raises:
        ConfigurationError: the input is not stopped at A_T.
        ClockOverrun: theta does not reach T within the span.
    """
    if stopped.stop_kind is not StopKind.A_T:
        raise ConfigurationError("psi_map needs an A_T-stopped path", stop_kind=str(stopped.stop_kind))
    path = stopped.path
    T = spec.horizon_T
    if isinstance(path, KnotPath):
        step = step or T / path.steps
    else:
        step = step or path.dt
    knots = path.times
    cum = cumulative_trapezoid(1.0 / spec.sigma2(path.values), x=knots, initial=0.0)
    steps = max(1, int(round(T / step)))
    t = np.minimum(np.arange(steps + 1) * step, T)
    reach = float(cum[-1])
    if reach < T <= reach + SNAP * T:
        t = np.minimum(t, reach)
    a = _inverse_knots(cum, knots, t)
    if np.isnan(a).any():
        raise ClockOverrun("A_t level not reached within the path span", requested=T, reached=reach)
    return SamplePath(0.0, step, path.value_at(np.minimum(a, path.t_end)))


def reclock_batch(bundle: PathBundle, spec: ModelSpec, times) -> np.ndarray:
    """x(A_t(x)) of every row at each of `times` (t <= T); NaN rows where A_t is unreachable."""
    acc = ClockAccumulator(bundle, spec)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.empty((bundle.replicates, times.size))
    for j, t in enumerate(times):
        a = acc.a(t)
        ok = ~np.isnan(a)
        vals = bundle.value_at(np.where(ok, np.minimum(a, bundle.t_end), bundle.t0))
        out[:, j] = np.where(ok, vals, np.nan)
    return out


# ---------------------------
# Path-extension kernel
# ---------------------------

def kernel_extend(
    stopped: StoppedPath,
    spec: ModelSpec,
    driver: BrownianDriver,
    margin: float = 0.05,
) -> StoppedPath:
    """
    Extend an S_T^n-stopped path past its stop time with drift-free increments
    eps*dW (from the driver's kernel lane) until the extended path's A_T is
    reached. The observed segment [0, S_T^n] is kept as is.

    Raises:
        ConfigurationError: the input is not stopped at S_T^n.
        ClockOverrun: A_T is not reached within sigma1^2 * T * (1 + margin).
    """
    if stopped.stop_kind is not StopKind.S_T_N:
        raise ConfigurationError("kernel_extend needs an S_T^n-stopped path", stop_kind=str(stopped.stop_kind))
    T = spec.horizon_T
    path, stop = stopped.path, stopped.stop_time
    dt = path.dt
    j = min(int(math.floor(stop / dt + SNAP)), path.steps)

    observed = np.asarray(path.values[: j + 1], dtype=float)
    theta_obs = _accumulate(1.0 / spec.sigma2(observed), dt)
    x_stop = path.value_at(stop)
    partial = stop - j * dt
    theta_stop = theta_obs[-1] + 0.5 * partial * (1.0 / spec.sigma2(observed[-1]) + 1.0 / spec.sigma2(x_stop))
    if theta_stop >= T - TIE_TOL:
        a_t = _inverse_row(theta_obs, 0.0, dt, np.array([T]))[0]
        a_t = stop if math.isnan(a_t) else min(a_t, stop)
        return StoppedPath(path.head(max(1, math.ceil(a_t / dt - SNAP))), a_t, StopKind.A_T)

    budget = spec.diffusion.sigma1 ** 2 * T * (1.0 + margin)
    extra = max(1, math.ceil((budget - j * dt) / dt))
    z = driver.normals(extra, Lane.KERNEL)
    first = (j + 1) * dt - stop
    incr = spec.epsilon * np.sqrt(dt) * z
    incr[0] = spec.epsilon * math.sqrt(first) * z[0] if first > SNAP * dt else 0.0
    tail = x_stop + np.cumsum(incr)

    values = np.concatenate([observed, tail])
    # replace the [j*dt, (j+1)*dt] trapezoid by the two pieces split at the stop time
    theta = _accumulate(1.0 / spec.sigma2(values), dt)
    inv = 1.0 / spec.sigma2(values)
    exact_first = 0.5 * partial * (inv[j] + 1.0 / spec.sigma2(x_stop)) + 0.5 * first * (1.0 / spec.sigma2(x_stop) + inv[j + 1])
    theta[j + 1:] += exact_first - 0.5 * dt * (inv[j] + inv[j + 1])
    a_t = _inverse_row(theta, 0.0, dt, np.array([T]))[0]
    if math.isnan(a_t):
        raise ClockOverrun("kernel extension did not reach A_T within its budget", requested=T, reached=float(theta[-1]))
    a_t = max(a_t, stop)
    keep = min(values.size - 1, max(1, math.ceil(a_t / dt - SNAP)))
    logger.debug("kernel extension from %.6g to %.6g (stream %d)", stop, a_t, driver.stream_id)
    return StoppedPath(SamplePath(0.0, dt, values[: keep + 1]), a_t, StopKind.A_T)
