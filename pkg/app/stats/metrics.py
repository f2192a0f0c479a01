"""
Monte Carlo estimators for the expectations in the rate statements, and
log-log rate fitting across (n, eps) sweeps.

Replicates are simulated in fixed-size chunks of consecutive stream ids by a
`ReplicatePool`; chunk results are reassembled in stream order and reduced by
pairwise summation, so an estimate depends only on (spec, grid, replicates,
seed), never on the worker count. Rows that come back NaN (a clock or stopping
time beyond the simulated span) are dropped, counted and logged with their
stream ids; more than 0.1% drops fails the estimate.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Literal, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from app.core.config import settings
from app.core.errors import ConfigurationError, DegenerateRatePoint, EstimateOutOfRange, ReplicateDropError
from app.schemas.model import ExperimentId, FineGridConfig, ModelSpec
from app.schemas.results import MCEstimate, RatePoint, RateTable
from app.sde import lamperti, path_engine, time_change
from app.sde.brownian import DriverBatch
from app.sde.experiments import sample_experiment
from app.sde.paths import StopKind
from app.stats import likelihood
from app.stats.likelihood import DriftHypothesis

logger = logging.getLogger(__name__)

MIN_REPLICATES = 100
MAX_DROP_FRACTION = 1e-3
MIN_RATE_POINTS = 4
ESS_WARN_FRACTION = 0.10
MOMENT_ORDERS = (2, 4, 8)

ChunkFn = Callable[[DriverBatch], np.ndarray]


def pairwise_sum(values) -> float:
    """Sum by repeated halving; the order of additions depends only on the length."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return 0.0
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0])


class ReplicatePool:
    """Thread pool over fixed-size replicate chunks, results in stream order."""

    def __init__(self, workers: int | None = None, chunk: int | None = None) -> None:
        self.workers = max(1, int(workers or settings.THREADS))
        self.chunk = max(1, int(chunk or settings.REPLICATE_CHUNK))

    def chunk_rows(self, steps: int) -> int:
        return max(1, min(self.chunk, settings.CHUNK_CELLS // max(1, steps + 1)))

    def run(
        self,
        fn: ChunkFn,
        seed: int,
        replicates: int,
        dt: float,
        steps: int = 1,
        first_stream: int = 0,
    ) -> tuple[np.ndarray, tuple[int, ...]]:
        rows = self.chunk_rows(steps)
        ids = list(range(first_stream, first_stream + replicates))
        batches = [DriverBatch(seed, tuple(ids[i : i + rows]), dt) for i in range(0, replicates, rows)]
        if self.workers == 1 or len(batches) == 1:
            parts = [fn(b) for b in batches]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as ex:
                parts = list(ex.map(fn, batches))
        return np.concatenate([np.asarray(p, dtype=float) for p in parts]), tuple(ids)


def _pool(pool: ReplicatePool | None) -> ReplicatePool:
    return pool if pool is not None else ReplicatePool()


def _require_replicates(replicates: int) -> None:
    if replicates < MIN_REPLICATES:
        raise ConfigurationError(f"at least {MIN_REPLICATES} replicates are needed", replicates=replicates)


def summarize(values: np.ndarray, seed: int, stream_ids: Sequence[int], what: str) -> MCEstimate:
    """
    Mean and standard error of the finite entries.

    Raises:
        ReplicateDropError: more than 0.1% of the entries are not finite.
    """
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    dropped = int(values.size - np.count_nonzero(ok))
    if dropped:
        lost = [int(s) for s, good in zip(stream_ids, ok) if not good]
        logger.warning("%s: dropped %d of %d replicates (seed=%d streams=%s)", what, dropped, values.size, seed, lost[:20])
        if dropped > MAX_DROP_FRACTION * values.size:
            raise ReplicateDropError(f"{what}: too many dropped replicates", dropped=dropped, total=values.size)
    kept = values[ok]
    m = kept.size
    mean = pairwise_sum(kept) / m
    var = pairwise_sum((kept - mean) ** 2) / (m - 1) if m > 1 else 0.0
    return MCEstimate(mean=mean, std_error=math.sqrt(var / m), replicates=m, seed=seed, dropped=dropped)


def _xi_bundle(spec: ModelSpec, grid: FineGridConfig, drivers: DriverBatch):
    return path_engine.simulate_constant_eps_batch(path_engine.DriftForm.F_OVER_SIGMA2, spec, grid, drivers)


# ---------------------------
# Clock and drift gaps
# ---------------------------

def estimate_clock_gap(
    spec: ModelSpec, grid: FineGridConfig, replicates: int, seed: int, pool: ReplicatePool | None = None
) -> MCEstimate:
    """E |A_T - A_bar_T^n| under the xi dynamics (drift f/sigma^2, diffusion eps)."""
    _require_replicates(replicates)

    def chunk(drivers: DriverBatch) -> np.ndarray:
        bundle = _xi_bundle(spec, grid, drivers)
        a_t = time_change.ClockAccumulator(bundle, spec).a(spec.horizon_T)
        a_bar = time_change.a_bar_knots_batch(bundle, spec)[:, -1]
        return np.abs(a_t - a_bar)

    values, ids = _pool(pool).run(chunk, seed, replicates, grid.fine_dt(spec), grid.constant_eps_steps(spec))
    return summarize(values, seed, ids, "clock gap")


def _drift_gap_samples(spec, grid, replicates, seed, pool) -> tuple[np.ndarray, tuple[int, ...]]:
    def chunk(drivers: DriverBatch) -> np.ndarray:
        bundle = _xi_bundle(spec, grid, drivers)
        upto = time_change.a_bar_knots_batch(bundle, spec)[:, -1]
        return likelihood.squared_gap_integral_batch(bundle, spec, upto)

    return _pool(pool).run(chunk, seed, replicates, grid.fine_dt(spec), grid.constant_eps_steps(spec))


def estimate_drift_gap_l2(
    spec: ModelSpec, grid: FineGridConfig, replicates: int, seed: int, pool: ReplicatePool | None = None
) -> MCEstimate:
    """E int_0^{A_bar_T^n} ((f/sigma^2)(x_s) - g_bar_n(s, x))^2 ds under the xi dynamics."""
    _require_replicates(replicates)
    values, ids = _drift_gap_samples(spec, grid, replicates, seed, pool)
    return summarize(values, seed, ids, "drift gap")


def estimate_hellinger_bound(
    spec: ModelSpec, grid: FineGridConfig, replicates: int, seed: int, pool: ReplicatePool | None = None
) -> MCEstimate:
    """4 * sqrt(E h_f(A_bar_T^n)), standard error by the delta method."""
    _require_replicates(replicates)
    values, ids = _drift_gap_samples(spec, grid, replicates, seed, pool)
    h = summarize(values / (8.0 * spec.epsilon ** 2), seed, ids, "hellinger process")
    root = math.sqrt(max(h.mean, 0.0))
    se = 2.0 * h.std_error / root if root > 0 else 0.0
    return MCEstimate(mean=4.0 * root, std_error=se, replicates=h.replicates, seed=seed, dropped=h.dropped)


def estimate_b_gap(
    spec: ModelSpec,
    grid: FineGridConfig,
    replicates: int,
    seed: int,
    pool: ReplicatePool | None = None,
    table: lamperti.TransformTable | None = None,
) -> MCEstimate:
    """E int_0^T (b(mu_s) - b_bar_n(s, mu))^2 ds under the mu dynamics."""
    _require_replicates(replicates)
    spec.require_lamperti()
    table = table if table is not None else lamperti.build_transform(spec)

    def chunk(drivers: DriverBatch) -> np.ndarray:
        bundle = path_engine.simulate_mu_family_batch(path_engine.MuForm.MU, spec, grid, drivers, table)
        x = bundle.values
        b = np.asarray(lamperti.drift_b(table, spec, x.ravel()), dtype=float).reshape(x.shape)
        bb = likelihood.b_bar_on_grid(x, bundle.t0, bundle.dt, spec, table)
        return cumulative_trapezoid((b - bb) ** 2, dx=bundle.dt, axis=1)[:, -1]

    values, ids = _pool(pool).run(chunk, seed, replicates, grid.fine_dt(spec), grid.steps_on_horizon(spec))
    return summarize(values, seed, ids, "b gap")


# ---------------------------
# Likelihood-ratio estimators
# ---------------------------

def _log_lr_samples(
    spec: ModelSpec,
    h1: DriftHypothesis,
    h0: DriftHypothesis,
    stop_rule: StopKind | str,
    grid: FineGridConfig,
    replicates: int,
    seed: int,
    pool: ReplicatePool | None,
) -> tuple[np.ndarray, tuple[int, ...]]:
    stop_rule = StopKind(stop_rule)
    if stop_rule not in (StopKind.FIXED_T, StopKind.A_BAR_T_N):
        raise ConfigurationError("stop_rule must be fixed_T or A_bar_T_n", stop_rule=str(stop_rule))
    if abs(h1.diffusion_eps - h0.diffusion_eps) > 1e-15 * h0.diffusion_eps:
        raise ConfigurationError("hypotheses must share the diffusion coefficient")

    def chunk(drivers: DriverBatch) -> np.ndarray:
        bundle = h0.sample(grid, drivers)
        if stop_rule is StopKind.FIXED_T:
            upto = spec.horizon_T
        else:
            upto = time_change.a_bar_knots_batch(bundle, spec)[:, -1]
        return likelihood.girsanov_log_lr_batch(bundle, h1, h0, upto)[0]

    return _pool(pool).run(chunk, seed, replicates, grid.fine_dt(spec), grid.constant_eps_steps(spec))


def effective_sample_size(log_weights: np.ndarray) -> float:
    lw = np.asarray(log_weights, dtype=float)
    lw = lw[np.isfinite(lw)]
    if lw.size == 0:
        return 0.0
    w = np.exp(lw - lw.max())
    return float(pairwise_sum(w) ** 2 / pairwise_sum(w * w))


def tv_integrand(log_lr) -> np.ndarray:
    """(1 - LR)^+ from log LR: in [0, 1] for any finite log LR, NaN stays NaN."""
    with np.errstate(over="ignore"):
        return np.maximum(-np.expm1(np.asarray(log_lr, dtype=float)), 0.0)


def estimate_tv_from_lr(
    spec: ModelSpec,
    h1: DriftHypothesis,
    h0: DriftHypothesis,
    stop_rule: StopKind | str,
    replicates: int,
    seed: int,
    grid: FineGridConfig | None = None,
    pool: ReplicatePool | None = None,
) -> MCEstimate:
    """
    TV(P_h1, P_h0) = (1/2) E_h0 |1 - LR| = E_h0 (1 - LR)^+ on [0, stop], paths
    drawn under h0; the bounded form is averaged.

    Raises:
        EstimateOutOfRange: the estimate lies outside [0, 1] by more than 3 standard errors.
    """
    _require_replicates(replicates)
    grid = grid if grid is not None else FineGridConfig()
    ell, ids = _log_lr_samples(spec, h1, h0, stop_rule, grid, replicates, seed, pool)
    ess = effective_sample_size(ell)
    if ess < ESS_WARN_FRACTION * replicates:
        logger.warning("heavy-tailed likelihood ratios (%s vs %s): ESS %.1f of %d", h1.label, h0.label, ess, replicates)
    est = summarize(tv_integrand(ell), seed, ids, f"TV {h1.label} vs {h0.label}")
    if est.mean - 3.0 * est.std_error > 1.0 or est.mean + 3.0 * est.std_error < 0.0:
        raise EstimateOutOfRange("TV estimate outside [0, 1]", mean=est.mean, std_error=est.std_error)
    return est


def estimate_girsanov_mean(
    spec: ModelSpec,
    h1: DriftHypothesis,
    h0: DriftHypothesis,
    replicates: int,
    seed: int,
    stop_rule: StopKind | str = StopKind.FIXED_T,
    grid: FineGridConfig | None = None,
    pool: ReplicatePool | None = None,
) -> MCEstimate:
    """E_h0[exp(log LR)], which is 1 for a true change of measure."""
    _require_replicates(replicates)
    grid = grid if grid is not None else FineGridConfig()
    ell, ids = _log_lr_samples(spec, h1, h0, stop_rule, grid, replicates, seed, pool)
    with np.errstate(over="ignore"):
        return summarize(np.exp(ell), seed, ids, f"LR mean {h1.label} vs {h0.label}")


# ---------------------------
# Moments
# ---------------------------

def estimate_moment(
    spec: ModelSpec,
    process: ExperimentId | str,
    p: int,
    at_time: float,
    replicates: int,
    seed: int,
    grid: FineGridConfig | None = None,
    pool: ReplicatePool | None = None,
) -> MCEstimate:
    """E |X_t|^p for the process of an experiment."""
    _require_replicates(replicates)
    if p not in MOMENT_ORDERS:
        raise ConfigurationError("moment order must be 2, 4 or 8", p=p)
    process = ExperimentId(process)
    grid = grid if grid is not None else FineGridConfig()
    table = None
    if process in (ExperimentId.N3, ExperimentId.N4, ExperimentId.N5, ExperimentId.N6):
        table = lamperti.build_transform(spec)

    def chunk(drivers: DriverBatch) -> np.ndarray:
        sample = sample_experiment(process, spec, grid, drivers, table)
        return np.abs(sample.values_at(at_time)) ** p

    steps = grid.constant_eps_steps(spec)
    values, ids = _pool(pool).run(chunk, seed, replicates, grid.fine_dt(spec), steps)
    return summarize(values, seed, ids, f"E|{process}|^{p}")


# ---------------------------
# Rate fitting
# ---------------------------

def _as_point(item, axis: str) -> RatePoint:
    if isinstance(item, RatePoint):
        return item
    value, estimate = item
    return RatePoint(
        axis_value=float(value),
        n=int(value) if axis == "n" else 0,
        epsilon=float(value) if axis == "epsilon" else 0.0,
        estimate=estimate,
    )


def fit_rate(
    points: Sequence,
    axis: Literal["n", "epsilon"] = "n",
    suite: str = "",
    quantity: str = "",
) -> RateTable:
    """
    Weighted least-squares slope of log(mean) on log(axis_value), weights
    1/(relative SE)^2 (unweighted when any SE is zero), with a 95% t interval.

    Raises:
        ConfigurationError: fewer than four points or repeated axis values.
        DegenerateRatePoint: a non-positive mean.
    """
    pts = [_as_point(p, axis) for p in points]
    if len(pts) < MIN_RATE_POINTS:
        raise ConfigurationError(f"a rate fit needs at least {MIN_RATE_POINTS} points", points=len(pts))
    a = np.array([p.axis_value for p in pts])
    m = np.array([p.estimate.mean for p in pts])
    se = np.array([p.estimate.std_error for p in pts])
    if np.any(m <= 0):
        bad = pts[int(np.argmax(m <= 0))]
        raise DegenerateRatePoint("degenerate rate point", axis_value=bad.axis_value, mean=bad.estimate.mean)
    if np.unique(a).size != a.size:
        raise ConfigurationError("rate fit needs distinct axis values")

    x, y = np.log(a), np.log(m)
    rel = se / m
    w = np.ones_like(x) if np.any(rel == 0) else 1.0 / rel ** 2
    W = w.sum()
    xb, yb = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - xb) ** 2).sum()
    slope = float((w * (x - xb) * (y - yb)).sum() / sxx)
    intercept = float(yb - slope * xb)
    resid = y - (intercept + slope * x)
    dof = len(pts) - 2
    s2 = float((w * resid ** 2).sum() / dof)
    half = float(stats.t.ppf(0.975, dof) * math.sqrt(s2 / sxx))
    return RateTable(
        suite=suite, axis=axis, points=pts, fitted_slope=slope,
        slope_ci_halfwidth=half, intercept=intercept, quantity=quantity,
    )


def compare_slope_hypotheses(table: RateTable, hypotheses: Mapping[str, float]) -> tuple[str, bool]:
    """Name of the hypothesised slope closest to the fit, and whether it lies inside the CI."""
    if not hypotheses:
        raise ConfigurationError("no slope hypotheses given")
    name = min(hypotheses, key=lambda k: abs(hypotheses[k] - table.fitted_slope))
    return name, abs(hypotheses[name] - table.fitted_slope) <= table.slope_ci_halfwidth


def theorem_one_rate(n: int, epsilon: float) -> float:
    """1/(eps*n) + (1/n + eps)^(1/4)."""
    return 1.0 / (epsilon * n) + (1.0 / n + epsilon) ** 0.25


def prop_two_rate(n: int, epsilon: float) -> float:
    """sqrt(eps^-2 n^-2 + n^-1)."""
    return math.sqrt(1.0 / (epsilon ** 2 * n ** 2) + 1.0 / n)
