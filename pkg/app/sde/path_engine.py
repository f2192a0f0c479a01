"""
Simulators for every continuous-time process of the equivalence chain.

All simulators are Euler-Maruyama on the fine grid of a `FineGridConfig`
(the ODEs use RK4), vectorised across replicates: the `*_batch` functions take
a `DriverBatch` and return a `PathBundle`, the single-path functions are the
one-row case. Brownian increments come from the driver at its own step and
are summed when the simulation step is coarser.

Piecewise-frozen coefficients are refreshed at observation knots t_i, which
are fine-grid knots because steps_per_interval is an integer. The clock-frozen
drift g_bar_n is refreshed at the path's own A_bar^n knots as they are crossed.
"""

import logging
from app.core.compat import StrEnum
from typing import Callable

import numpy as np

from app.core.errors import SimulationBlowUp
from app.schemas.model import FineGridConfig, ModelSpec
from app.sde import lamperti
from app.sde.brownian import BrownianDriver, DriverBatch, Lane, coarsen_factor
from app.sde.paths import PathBundle, SamplePath

logger = logging.getLogger(__name__)


class DriftForm(StrEnum):
    F_OVER_SIGMA2 = "f_over_sigma2"
    GBAR = "gbar"
    ZETA_BAR = "zeta_bar"


class MuForm(StrEnum):
    MU = "mu"
    MU_BAR = "mu_bar"


class OdeForm(StrEnum):
    Z = "z"
    Z_BAR = "z_bar"


def driver_for(spec: ModelSpec, grid: FineGridConfig, seed: int, stream_id: int, refine: int = 1) -> BrownianDriver:
    """A driver whose step is the grid's fine step divided by `refine`."""
    return BrownianDriver(seed, stream_id, grid.fine_dt(spec) / refine)


def batch_for(
    spec: ModelSpec, grid: FineGridConfig, seed: int, count: int, first_stream: int = 0, refine: int = 1
) -> DriverBatch:
    return DriverBatch.replicates(seed, count, grid.fine_dt(spec) / refine, first_stream)


def _as_batch(driver: BrownianDriver | DriverBatch) -> DriverBatch:
    return DriverBatch.of(driver) if isinstance(driver, BrownianDriver) else driver


def _check(x: np.ndarray, step: int, what: str) -> None:
    if not np.isfinite(x).all():
        bad = int(np.argmax(~np.isfinite(x)))
        logger.error("simulation blow-up in %s at step %d (row %d)", what, step, bad)
        raise SimulationBlowUp(f"simulation blow-up in {what}", step=step)


def _frozen_active(interval: int, grid: FineGridConfig) -> float:
    # the literal indexing leaves the first interval without frozen coefficients
    return 0.0 if (grid.index_convention == "from_one" and interval == 0) else 1.0


def _increments(drivers: DriverBatch, fine_dt: float, steps: int, lane: Lane = Lane.FINE) -> np.ndarray:
    return drivers.increments(steps, coarsen_factor(fine_dt, drivers.dt), lane)


# ---------------------------
# y (M1) and y_bar (M2)
# ---------------------------

def simulate_y_batch(spec: ModelSpec, grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
    """dy = f(y)dt + eps*sigma(y)dW on [0, T], y0 = w."""
    dt = grid.fine_dt(spec)
    steps = grid.steps_on_horizon(spec)
    dW = _increments(drivers, dt, steps)
    eps = spec.epsilon
    x = np.empty((drivers.size, steps + 1))
    x[:, 0] = spec.w
    for k in range(steps):
        xk = x[:, k]
        x[:, k + 1] = xk + spec.f(xk) * dt + eps * spec.sigma(xk) * dW[:, k]
        _check(x[:, k + 1], k + 1, "y")
    return PathBundle(0.0, dt, x, drivers.stream_ids)


def simulate_y(spec: ModelSpec, grid: FineGridConfig, driver: BrownianDriver) -> SamplePath:
    return simulate_y_batch(spec, grid, _as_batch(driver)).row(0)


def simulate_y_bar_batch(spec: ModelSpec, grid: FineGridConfig, drivers: DriverBatch) -> PathBundle:
    """dy_bar = f_bar_n dt + eps*sigma_bar_n dW with f, sigma frozen at the last observation knot."""
    dt = grid.fine_dt(spec)
    spi = grid.steps_per_interval
    steps = grid.steps_on_horizon(spec)
    dW = _increments(drivers, dt, steps)
    eps = spec.epsilon
    x = np.empty((drivers.size, steps + 1))
    x[:, 0] = spec.w
    f_level = s_level = None
    for k in range(steps):
        if k % spi == 0:
            on = _frozen_active(k // spi, grid)
            f_level = on * spec.f(x[:, k])
            s_level = on * spec.sigma(x[:, k])
        x[:, k + 1] = x[:, k] + f_level * dt + eps * s_level * dW[:, k]
        _check(x[:, k + 1], k + 1, "y_bar")
    return PathBundle(0.0, dt, x, drivers.stream_ids)


def simulate_y_bar(spec: ModelSpec, grid: FineGridConfig, driver: BrownianDriver) -> SamplePath:
    return simulate_y_bar_batch(spec, grid, _as_batch(driver)).row(0)


# ---------------------------
# constant-eps processes (M3..M6, zeta_bar)
# ---------------------------

def simulate_constant_eps_batch(
    form: DriftForm | str,
    spec: ModelSpec,
    grid: FineGridConfig,
    drivers: DriverBatch,
) -> PathBundle:
    """
    dx = drift dt + eps dW, x0 = w, on [0, horizon_multiplier * T].

    f_over_sigma2: drift (f/sigma^2)(x_t).
    gbar: drift (f/sigma^2)(x at the last crossed A_bar^n knot); the knots are
        built from the path itself, A_bar_{t_{i+1}} = A_bar_{t_i} + sigma^2(x(A_bar_{t_i}))*T/n.
        Past A_bar_T^n the drift continues as (f/sigma^2)(x_t).
    zeta_bar: drift (f/sigma^2)(x_t) * sigma^2(x_{t_i}), t_i the last observation knot.
    """
    form = DriftForm(form)
    dt = grid.fine_dt(spec)
    spi = grid.steps_per_interval
    steps = grid.constant_eps_steps(spec)
    dW = _increments(drivers, dt, steps)
    eps = spec.epsilon
    R = drivers.size
    x = np.empty((R, steps + 1))
    x[:, 0] = spec.w

    if form is DriftForm.F_OVER_SIGMA2:
        for k in range(steps):
            xk = x[:, k]
            x[:, k + 1] = xk + spec.f_over_sigma2(xk) * dt + eps * dW[:, k]
            _check(x[:, k + 1], k + 1, form.value)

    elif form is DriftForm.ZETA_BAR:
        level = None
        for k in range(steps):
            xk = x[:, k]
            if k % spi == 0:
                level = _frozen_active(k // spi, grid) * spec.sigma2(xk)
            x[:, k + 1] = xk + spec.f_over_sigma2(xk) * level * dt + eps * dW[:, k]
            _check(x[:, k + 1], k + 1, form.value)

    else:
        n, delta = spec.n_obs, spec.dt_obs
        interval = np.zeros(R, dtype=np.int64)
        w = np.full(R, spec.w)
        level = spec.f_over_sigma2(w)
        a_next = spec.sigma2(w) * delta
        for k in range(steps):
            s = k * dt
            while True:
                rows = np.nonzero((interval < n) & (a_next <= s))[0]
                if rows.size == 0:
                    break
                pos = a_next[rows] / dt
                j = np.minimum(np.floor(pos).astype(np.int64), k)
                frac = pos - j
                j1 = np.minimum(j + 1, k)
                xa = np.where(frac == 0.0, x[rows, j], x[rows, j] + frac * (x[rows, j1] - x[rows, j]))
                interval[rows] += 1
                level[rows] = spec.f_over_sigma2(xa)
                a_next[rows] = a_next[rows] + spec.sigma2(xa) * delta
            xk = x[:, k]
            drift = np.where(interval < n, level, spec.f_over_sigma2(xk))
            x[:, k + 1] = xk + drift * dt + eps * dW[:, k]
            _check(x[:, k + 1], k + 1, form.value)

    return PathBundle(0.0, dt, x, drivers.stream_ids)


def simulate_constant_eps(
    form: DriftForm | str, spec: ModelSpec, grid: FineGridConfig, driver: BrownianDriver
) -> SamplePath:
    return simulate_constant_eps_batch(form, spec, grid, _as_batch(driver)).row(0)


def simulate_markov_batch(
    drift: Callable[[np.ndarray], np.ndarray],
    diffusion: float,
    x0: float,
    dt: float,
    steps: int,
    drivers: DriverBatch,
    what: str = "markov",
) -> PathBundle:
    """dx = drift(x)dt + diffusion*dW from x0, for drift hypotheses simulated directly."""
    dW = _increments(drivers, dt, steps)
    x = np.empty((drivers.size, steps + 1))
    x[:, 0] = x0
    for k in range(steps):
        xk = x[:, k]
        x[:, k + 1] = xk + drift(xk) * dt + diffusion * dW[:, k]
        _check(x[:, k + 1], k + 1, what)
    return PathBundle(0.0, dt, x, drivers.stream_ids)


# ---------------------------
# Euler scheme (M7)
# ---------------------------

def simulate_euler_batch(spec: ModelSpec, drivers: DriverBatch) -> np.ndarray:
    """Z_i = Z_{i-1} + (T/n) f(Z_{i-1}) + eps*sqrt(T/n)*sigma(Z_{i-1})*xi_i; shape (R, n+1)."""
    n, delta = spec.n_obs, spec.dt_obs
    xi = drivers.normals(n, Lane.EULER)
    z = np.empty((drivers.size, n + 1))
    z[:, 0] = spec.w
    root = np.sqrt(delta)
    for i in range(1, n + 1):
        prev = z[:, i - 1]
        z[:, i] = prev + delta * spec.f(prev) + spec.epsilon * root * spec.sigma(prev) * xi[:, i - 1]
    return z


def simulate_euler(spec: ModelSpec, driver: BrownianDriver) -> np.ndarray:
    return simulate_euler_batch(spec, DriverBatch.of(driver))[0]


# ---------------------------
# mu (N3) and mu_bar (N5)
# ---------------------------

def simulate_mu_family_batch(
    form: MuForm | str,
    spec: ModelSpec,
    grid: FineGridConfig,
    drivers: DriverBatch,
    table: lamperti.TransformTable | None = None,
) -> PathBundle:
    """
    Unit-diffusion Lamperti image on [0, T], mu0 = F(w):
    mu: dmu = b(mu)dt + dW;  mu_bar: dmu = b(mu_{t_i})dt + dW on (t_i, t_{i+1}].
    """
    form = MuForm(form)
    spec.require_lamperti()
    table = table if table is not None else lamperti.build_transform(spec)
    dt = grid.fine_dt(spec)
    spi = grid.steps_per_interval
    steps = grid.steps_on_horizon(spec)
    dW = _increments(drivers, dt, steps)
    x = np.empty((drivers.size, steps + 1))
    x[:, 0] = lamperti.transform(table, spec.w)
    level = None
    for k in range(steps):
        xk = x[:, k]
        if form is MuForm.MU:
            drift = lamperti.drift_b(table, spec, xk)
        else:
            if k % spi == 0:
                level = lamperti.drift_b(table, spec, xk)
            drift = level
        x[:, k + 1] = xk + drift * dt + dW[:, k]
        _check(x[:, k + 1], k + 1, form.value)
    return PathBundle(0.0, dt, x, drivers.stream_ids)


def simulate_mu_family(
    form: MuForm | str,
    spec: ModelSpec,
    grid: FineGridConfig,
    driver: BrownianDriver,
    table: lamperti.TransformTable | None = None,
) -> SamplePath:
    return simulate_mu_family_batch(form, spec, grid, _as_batch(driver), table).row(0)


# ---------------------------
# ODEs z and z_bar
# ---------------------------

def solve_ode(form: OdeForm | str, spec: ModelSpec, grid: FineGridConfig) -> SamplePath:
    """
    RK4 on the fine grid over [0, T] from w:
    z: dz/dt = f(z);  z_bar: dz/dt = (f/sigma^2)(z) * sigma^2(z_{t_i}) with the
    level frozen at each observation knot (the right-hand side jumps only there).
    """
    form = OdeForm(form)
    dt = grid.fine_dt(spec)
    spi = grid.steps_per_interval
    steps = grid.steps_on_horizon(spec)
    z = np.empty(steps + 1)
    z[0] = spec.w

    level = 1.0
    if form is OdeForm.Z:
        def rhs(u):
            return float(spec.f(np.asarray(u)))
    else:
        def rhs(u):
            return float(spec.f_over_sigma2(np.asarray(u))) * level

    for k in range(steps):
        u = z[k]
        if form is OdeForm.Z_BAR and k % spi == 0:
            level = _frozen_active(k // spi, grid) * float(spec.sigma2(np.asarray(u)))
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        z[k + 1] = u + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.isfinite(z[k + 1]):
            raise SimulationBlowUp(f"simulation blow-up in {form.value}", step=k + 1)
    return SamplePath(0.0, dt, z)
