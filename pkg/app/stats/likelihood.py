"""
Pathwise likelihoods at a common constant diffusion coefficient.

A `DriftHypothesis` evaluates its (possibly path-dependent) drift at every
grid knot of a bundle of paths, reading each path only up to that knot.
The Girsanov log-likelihood ratio between two hypotheses is

    (1/eps^2) int (g1 - g0)(s, x) dx_s - (1/(2 eps^2)) int (g1^2 - g0^2)(s, x) ds

with both integrals taken left-endpoint on the fine grid. Everything stays in
log space; callers exponentiate.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from app.core.errors import AdaptednessViolation, ConfigurationError, ModelEvaluationError, PathRangeError
from app.schemas.model import FineGridConfig, ModelSpec
from app.schemas.results import LogLikelihoodRatio
from app.sde import lamperti, path_engine
from app.sde.brownian import DriverBatch
from app.sde.paths import SNAP, PathBundle, SamplePath, interp_uniform

logger = logging.getLogger(__name__)

GridDrift = Callable[[np.ndarray, float, float], np.ndarray]
Sampler = Callable[[FineGridConfig, DriverBatch], PathBundle]


@dataclass(frozen=True)
class DriftHypothesis:
    """
    A drift at diffusion coefficient `diffusion_eps`.

    `on_grid(values, t0, dt)` maps paths of shape (R, N) to drift values of the
    same shape; entry k may read values[:, :k+1] only. `sampler` simulates
    paths under the hypothesis when it is simulable.
    """

    label: str
    diffusion_eps: float
    on_grid: GridDrift
    x0: float = 0.0
    sampler: Optional[Sampler] = None

    def __post_init__(self) -> None:
        if not self.diffusion_eps > 0:
            raise ConfigurationError("diffusion_eps must be positive", label=self.label)

    def drift_at(self, t: float, path: SamplePath) -> float:
        """Drift at grid time t computed from the path prefix on [t0, t] alone."""
        k = path.index_of(t)
        prefix = np.asarray(path.values[: k + 1], dtype=float)[None, :]
        return float(self.on_grid(prefix, path.t0, path.dt)[0, -1])

    def sample(self, grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
        if self.sampler is None:
            raise ConfigurationError("hypothesis cannot be simulated", label=self.label)
        return self.sampler(grid, drivers)


# ---------------------------
# Hypothesis factories
# ---------------------------

def _steps(spec: ModelSpec, grid: FineGridConfig, span: str) -> int:
    return grid.constant_eps_steps(spec) if span == "constant_eps" else grid.steps_on_horizon(spec)


def state_hypothesis(
    label: str,
    fn: Callable[[np.ndarray], np.ndarray],
    spec: ModelSpec,
    diffusion_eps: float,
    x0: float,
    span: Literal["horizon", "constant_eps"] = "constant_eps",
) -> DriftHypothesis:
    """Markov drift fn(x_t)."""

    def on_grid(values: np.ndarray, t0: float, dt: float) -> np.ndarray:
        return np.broadcast_to(np.asarray(fn(values), dtype=float), values.shape)

    def sampler(grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
        return path_engine.simulate_markov_batch(
            fn, diffusion_eps, x0, grid.fine_dt(spec), _steps(spec, grid, span), drivers, what=label
        )

    return DriftHypothesis(label, diffusion_eps, on_grid, x0, sampler)


def zero_hypothesis(spec: ModelSpec, diffusion_eps: float | None = None, x0: float | None = None,
                    span: Literal["horizon", "constant_eps"] = "constant_eps") -> DriftHypothesis:
    return state_hypothesis(
        "0", np.zeros_like, spec, diffusion_eps or spec.epsilon, spec.w if x0 is None else x0, span
    )


def constant_hypothesis(c: float, spec: ModelSpec, diffusion_eps: float | None = None,
                        x0: float | None = None,
                        span: Literal["horizon", "constant_eps"] = "horizon") -> DriftHypothesis:
    return state_hypothesis(
        f"const({c:g})",
        lambda x: np.full_like(np.asarray(x, dtype=float), c),
        spec, diffusion_eps or spec.epsilon, spec.w if x0 is None else x0, span,
    )


def f_over_sigma2_hypothesis(spec: ModelSpec) -> DriftHypothesis:
    h = state_hypothesis("f/sigma^2", spec.f_over_sigma2, spec, spec.epsilon, spec.w)

    def sampler(grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
        return path_engine.simulate_constant_eps_batch(path_engine.DriftForm.F_OVER_SIGMA2, spec, grid, drivers)

    return DriftHypothesis(h.label, h.diffusion_eps, h.on_grid, h.x0, sampler)


def _a_bar_knots_raw(values: np.ndarray, t0: float, dt: float, spec: ModelSpec) -> np.ndarray:
    """A_bar^n knots per row of raw path values; +inf once a knot is beyond the values."""
    n, delta = spec.n_obs, spec.dt_obs
    R, N = values.shape
    reach = t0 + (N - 1) * dt + SNAP * dt
    knots = np.full((R, n + 1), np.inf)
    knots[:, 0] = t0
    current = np.full(R, t0)
    for i in range(n):
        ok = current <= reach
        if not ok.any():
            break
        x = interp_uniform(values, t0, dt, np.where(ok, current, t0))
        current = np.where(ok, current + spec.sigma2(x) * delta, np.inf)
        knots[:, i + 1] = current
    return knots


def g_bar_on_grid(
    values: np.ndarray, t0: float, dt: float, spec: ModelSpec, beyond: Literal["state", "zero"] = "state"
) -> np.ndarray:
    """
    g_bar_n at every knot, right-continuous: level (f/sigma^2)(x(A_bar_{t_i})) on
    [A_bar_{t_i}, A_bar_{t_{i+1}}). Past A_bar_T^n it is (f/sigma^2)(x_t)
    (beyond="state", the simulated dynamics) or 0 (beyond="zero").
    """
    n = spec.n_obs
    R, N = values.shape
    knots = _a_bar_knots_raw(values, t0, dt, spec)
    finite = np.isfinite(knots[:, :n])
    x_at = interp_uniform(values, t0, dt, np.where(finite, knots[:, :n], t0))
    levels = np.where(finite, spec.f_over_sigma2(x_at), np.nan)
    times = t0 + np.arange(N) * dt
    out = np.empty((R, N))
    tail = spec.f_over_sigma2(values) if beyond == "state" else np.zeros((R, N))
    for r in range(R):
        i = np.searchsorted(knots[r], times, side="right") - 1
        inside = i < n
        out[r] = np.where(inside, levels[r, np.minimum(i, n - 1)], tail[r])
    return out


def _g_bar_left_level(values: np.ndarray, t0: float, dt: float, spec: ModelSpec, at: np.ndarray) -> np.ndarray:
    """Level of the interval (A_bar_{t_i}, A_bar_{t_{i+1}}] containing `at`, 0 outside (0, A_bar_T^n]."""
    n = spec.n_obs
    knots = _a_bar_knots_raw(values, t0, dt, spec)
    out = np.zeros(values.shape[0])
    for r in range(values.shape[0]):
        i = int(np.searchsorted(knots[r], at[r], side="left")) - 1
        if 0 <= i < n and np.isfinite(knots[r, i]):
            x = interp_uniform(values[r], t0, dt, knots[r, i])
            out[r] = float(spec.f_over_sigma2(np.asarray(x)))
    return out


def g_bar_hypothesis(spec: ModelSpec) -> DriftHypothesis:
    def on_grid(values: np.ndarray, t0: float, dt: float) -> np.ndarray:
        return g_bar_on_grid(values, t0, dt, spec)

    def sampler(grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
        return path_engine.simulate_constant_eps_batch(path_engine.DriftForm.GBAR, spec, grid, drivers)

    return DriftHypothesis("g_bar_n", spec.epsilon, on_grid, spec.w, sampler)


def b_hypothesis(spec: ModelSpec, table: lamperti.TransformTable) -> DriftHypothesis:
    x0 = float(lamperti.transform(table, spec.w))

    def on_grid(values: np.ndarray, t0: float, dt: float) -> np.ndarray:
        return np.asarray(lamperti.drift_b(table, spec, values.ravel()), dtype=float).reshape(values.shape)

    def sampler(grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
        return path_engine.simulate_mu_family_batch(path_engine.MuForm.MU, spec, grid, drivers, table)

    return DriftHypothesis("b", 1.0, on_grid, x0, sampler)


def b_bar_on_grid(values: np.ndarray, t0: float, dt: float, spec: ModelSpec, table: lamperti.TransformTable) -> np.ndarray:
    """b(x(t_i)) on [t_i, t_{i+1}); the last level also covers t >= T."""
    n, delta = spec.n_obs, spec.dt_obs
    R, N = values.shape
    times = t0 + np.arange(N) * dt
    i = np.minimum(np.floor((times - t0) / delta + SNAP).astype(np.int64), n - 1)
    knot_times = t0 + np.arange(n) * delta
    reachable = knot_times <= times[-1] + SNAP * dt
    x_at = interp_uniform(values, t0, dt, np.broadcast_to(np.where(reachable, knot_times, t0), (R, n)))
    levels = np.asarray(lamperti.drift_b(table, spec, x_at.ravel()), dtype=float).reshape(R, n)
    return levels[:, i]


def b_bar_hypothesis(spec: ModelSpec, table: lamperti.TransformTable) -> DriftHypothesis:
    x0 = float(lamperti.transform(table, spec.w))

    def on_grid(values: np.ndarray, t0: float, dt: float) -> np.ndarray:
        return b_bar_on_grid(values, t0, dt, spec, table)

    def sampler(grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
        return path_engine.simulate_mu_family_batch(path_engine.MuForm.MU_BAR, spec, grid, drivers, table)

    return DriftHypothesis("b_bar_n", 1.0, on_grid, x0, sampler)


# ---------------------------
# Adaptedness
# ---------------------------

def check_adapted(h: DriftHypothesis, path: SamplePath, cut_time: float, seed: int = 0) -> None:
    """
    Perturb the path after `cut_time` and require the drift up to `cut_time`
    to be unchanged bit for bit.

    Raises:
        AdaptednessViolation: the drift reads values after its time argument.
    """
    k = path.index_of(cut_time)
    values = np.asarray(path.values, dtype=float)[None, :]
    moved = values.copy()
    noise = np.random.default_rng(seed).standard_normal(moved.shape[1] - k - 1)
    moved[0, k + 1:] += noise
    before = h.on_grid(values, path.t0, path.dt)[0, : k + 1]
    after = h.on_grid(moved, path.t0, path.dt)[0, : k + 1]
    if not np.array_equal(before, after, equal_nan=True):
        raise AdaptednessViolation(f"drift '{h.label}' depends on the path after t={cut_time:g}")


# ---------------------------
# Girsanov log-likelihood ratio
# ---------------------------

def _cut(bundle: PathBundle, upto: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Whole steps before `upto` and the leftover fraction of a step, per row."""
    pos = (upto - bundle.t0) / bundle.dt
    nearest = np.rint(pos)
    pos = np.where(np.abs(pos - nearest) < SNAP, nearest, pos)
    k = np.clip(np.floor(np.nan_to_num(pos)).astype(np.int64), 0, bundle.steps)
    partial = np.where(np.isnan(pos), 0.0, (pos - k) * bundle.dt)
    return k, partial


def girsanov_log_lr_batch(
    bundle: PathBundle, h1: DriftHypothesis, h0: DriftHypothesis, upto
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Log-likelihood ratio dP_h1/dP_h0 on [0, upto] for every row: (value,
    stochastic-integral part, bounded-variation part). Rows whose upto is NaN
    come back NaN.
    """
    if abs(h1.diffusion_eps - h0.diffusion_eps) > 1e-15 * h0.diffusion_eps:
        raise ConfigurationError(
            "likelihood ratios need a common diffusion coefficient",
            h1=h1.diffusion_eps, h0=h0.diffusion_eps,
        )
    R = bundle.replicates
    upto = np.broadcast_to(np.asarray(upto, dtype=float), (R,)).copy()
    if np.any(upto[~np.isnan(upto)] > bundle.t_end + SNAP * bundle.dt):
        raise PathRangeError("likelihood horizon beyond the path span", span=bundle.t_end)
    missing = np.isnan(upto)
    upto[missing] = bundle.t0

    x = bundle.values
    g1 = h1.on_grid(x, bundle.t0, bundle.dt)
    g0 = h0.on_grid(x, bundle.t0, bundle.dt)
    k, partial = _cut(bundle, upto)
    rows = np.arange(R)
    used = np.arange(bundle.steps)[None, :] < k[:, None]

    dg = g1 - g0
    sq = g1 * g1 - g0 * g0
    dx = np.diff(x, axis=1)
    x_end = interp_uniform(x, bundle.t0, bundle.dt, upto)
    stoch = (np.where(used, dg[:, :-1] * dx, 0.0).sum(axis=1)
             + np.where(partial > 0, dg[rows, k] * (x_end - x[rows, k]), 0.0))
    lebesgue = (np.where(used, sq[:, :-1], 0.0).sum(axis=1) * bundle.dt
                + np.where(partial > 0, sq[rows, k] * partial, 0.0))

    eps2 = h0.diffusion_eps ** 2
    stoch = stoch / eps2
    bv = -0.5 * lebesgue / eps2
    value = stoch + bv
    for arr in (value, stoch, bv):
        arr[missing] = np.nan
    return value, stoch, bv


def girsanov_log_lr(path: SamplePath, h1: DriftHypothesis, h0: DriftHypothesis, upto: float) -> LogLikelihoodRatio:
    """
    Raises:
        ConfigurationError: different diffusion coefficients.
        PathRangeError: upto beyond the path span.
        ModelEvaluationError: a drift is not finite before upto.
        AdaptednessViolation: (debug) a drift reads the future.
    """
    if __debug__ and path.covers(upto) and upto > path.t0:
        cut = path.t0 + path.dt * min(path.steps - 1, max(0, int(0.5 * (upto - path.t0) / path.dt)))
        check_adapted(h1, path, cut)
        check_adapted(h0, path, cut)
    value, stoch, bv = girsanov_log_lr_batch(PathBundle.from_path(path), h1, h0, upto)
    if not (math.isfinite(value[0]) and math.isfinite(stoch[0]) and math.isfinite(bv[0])):
        raise ModelEvaluationError("non-finite likelihood integrand", point=float(upto))
    return LogLikelihoodRatio(
        value=float(value[0]), stoch_integral_part=float(stoch[0]), bounded_variation_part=float(bv[0])
    )


# ---------------------------
# Grid-value densities
# ---------------------------

def _check_obs(obs, spec: ModelSpec, start: float) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1 or obs.size != spec.n_obs + 1:
        raise ConfigurationError("observation vector must have n+1 entries", expected=spec.n_obs + 1, got=obs.size)
    if abs(obs[0] - start) > 1e-9 * max(1.0, abs(start)):
        raise ConfigurationError("first observation must be the initial condition", expected=start, got=float(obs[0]))
    return obs


def euler_sufficient_logdensity(obs, spec: ModelSpec) -> float:
    """
    log of the density of the grid values under drift f against drift 0:
    sum_i f(w_i)/(eps^2 sigma^2(w_i)) (w_{i+1} - w_i) - f^2(w_i) (T/n) / (2 eps^2 sigma^2(w_i)).
    """
    obs = _check_obs(obs, spec, spec.w)
    head = obs[:-1]
    scale = spec.epsilon ** 2 * spec.sigma2(head)
    f = spec.f(head)
    terms = f / scale * np.diff(obs) - f * f * spec.dt_obs / (2.0 * scale)
    return float(np.sum(terms))


def grid_values(path: SamplePath, spec: ModelSpec) -> np.ndarray:
    """Path values at t_0..t_n read off the knots directly."""
    return np.array([path.values[path.index_of(t)] for t in spec.obs_grid()])


def euler_sufficient_logdensity_path(path: SamplePath, spec: ModelSpec) -> float:
    return euler_sufficient_logdensity(grid_values(path, spec), spec)


def unit_sufficient_logdensity(obs, table: lamperti.TransformTable, spec: ModelSpec) -> float:
    """Grid-value log density of the frozen unit-diffusion model: sum b(w_i)(w_{i+1} - w_i) - b(w_i)^2 (T/n)/2."""
    obs = _check_obs(obs, spec, float(lamperti.transform(table, spec.w)))
    b = np.asarray(lamperti.drift_b(table, spec, obs[:-1]), dtype=float)
    return float(np.sum(b * np.diff(obs) - 0.5 * b * b * spec.dt_obs))


# ---------------------------
# Hellinger process
# ---------------------------

def squared_gap_integral_batch(bundle: PathBundle, spec: ModelSpec, upto) -> np.ndarray:
    """
    int_0^upto ((f/sigma^2)(x_s) - g_bar_n(s, x))^2 ds per row by the trapezoid
    rule; g_bar_n is zero past A_bar_T^n and takes its left-open level at upto.
    """
    R = bundle.replicates
    upto = np.broadcast_to(np.asarray(upto, dtype=float), (R,)).copy()
    missing = np.isnan(upto)
    upto[missing] = bundle.t0
    if np.any(upto > bundle.t_end + SNAP * bundle.dt):
        raise PathRangeError("integration horizon beyond the path span", span=bundle.t_end)

    x = bundle.values
    q = (spec.f_over_sigma2(x) - g_bar_on_grid(x, bundle.t0, bundle.dt, spec, beyond="zero")) ** 2
    cum = cumulative_trapezoid(q, dx=bundle.dt, axis=1, initial=0.0)
    k, partial = _cut(bundle, upto)
    rows = np.arange(R)
    x_end = interp_uniform(x, bundle.t0, bundle.dt, upto)
    q_end = (spec.f_over_sigma2(x_end) - _g_bar_left_level(x, bundle.t0, bundle.dt, spec, upto)) ** 2
    total = cum[rows, k]
    total = np.where(
        partial > 0,
        total + 0.5 * partial * (q[rows, k] + q_end),
        total + np.where(k > 0, 0.5 * bundle.dt * (q_end - q[rows, k]), 0.0),
    )
    total[missing] = np.nan
    return total


def hellinger_process(path: SamplePath, spec: ModelSpec, upto: float) -> float:
    """h_f(upto) = (1/(8 eps^2)) int_0^upto ((f/sigma^2)(x_s) - g_bar_n(s, x))^2 ds."""
    gap = squared_gap_integral_batch(PathBundle.from_path(path), spec, upto)[0]
    return float(gap / (8.0 * spec.epsilon ** 2))
