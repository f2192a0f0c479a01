import numpy as np
import pytest

from app.core.errors import SimulationBlowUp
from app.schemas.model import DiffusionSpec, DriftSpec, FineGridConfig, ModelSpec
from app.sde import path_engine
from app.sde.brownian import BrownianDriver, DriverBatch, Lane
from app.sde.model_core import constant_sigma



def test_simulation_is_deterministic(sin_spec, small_grid, driver):
    a = path_engine.simulate_y(sin_spec, small_grid, driver)
    b = path_engine.simulate_y(sin_spec, small_grid, driver)
    assert np.array_equal(a.values, b.values)
    assert a.values[0] == sin_spec.w
    assert a.t_end == pytest.approx(sin_spec.horizon_T)


def test_batch_rows_match_single_paths(sin_spec, small_grid, batch):
    bundle = path_engine.simulate_y_batch(sin_spec, small_grid, batch)
    single = path_engine.simulate_y(sin_spec, small_grid, batch.driver(3))
    assert bundle.replicates == batch.size
    assert np.array_equal(bundle.values[3], single.values)


def test_unit_sigma_xi_coincides_with_y(unit_spec, small_grid):
    driver = BrownianDriver(seed=5, stream_id=1, dt=small_grid.fine_dt(unit_spec))
    y = path_engine.simulate_y(unit_spec, small_grid, driver)
    xi = path_engine.simulate_constant_eps("f_over_sigma2", unit_spec, small_grid, driver)
    assert xi.steps > y.steps
    assert np.array_equal(xi.values[: y.values.size], y.values)


def test_refined_driver_feeds_coarser_grid(sin_spec, small_grid):
    fine_driver = path_engine.driver_for(sin_spec, small_grid, seed=2, stream_id=0, refine=2)
    coarse = path_engine.simulate_y(sin_spec, small_grid, fine_driver)
    fine = path_engine.simulate_y(sin_spec, small_grid.refined(2), fine_driver)
    assert coarse.steps * 2 == fine.steps
    # both discretise the same Brownian path, so they stay close at eps = 0.1
    assert np.max(np.abs(coarse.values - fine.values[::2])) < 0.05


def test_y_bar_literal_indexing_freezes_first_interval(sin_spec):
    grid = FineGridConfig(steps_per_interval=8, index_convention="from_one")
    driver = path_engine.driver_for(sin_spec, grid, seed=3, stream_id=0)
    path = path_engine.simulate_y_bar(sin_spec.with_w(0.4), grid, driver)
    assert np.all(path.values[: grid.steps_per_interval + 1] == 0.4)


def test_y_bar_is_constant_coefficient_within_intervals(sin_spec, small_grid, driver):
    path = path_engine.simulate_y_bar(sin_spec, small_grid, driver)
    dW = driver.increments(small_grid.steps_on_horizon(sin_spec))
    x0 = path.values[0]
    spi, dt = small_grid.steps_per_interval, small_grid.fine_dt(sin_spec)
    expected = x0 + np.cumsum(sin_spec.f(x0) * dt + sin_spec.epsilon * sin_spec.sigma(x0) * dW[:spi])
    assert np.allclose(path.values[1 : spi + 1], expected, atol=1e-14)


def test_euler_scheme_uses_its_own_lane(make_spec):
    spec = make_spec("zero-drift", n=16)
    driver = BrownianDriver(seed=8, stream_id=4, dt=1.0 / 16)
    z = path_engine.simulate_euler(spec, driver)
    xi = driver.normals(16, Lane.EULER)
    assert z.shape == (17,)
    assert np.allclose(np.diff(z), spec.epsilon * np.sqrt(spec.dt_obs) * xi)


def test_euler_batch_shape_and_constant_drift(make_spec):
    spec = make_spec("const-drift", n=8, c=0.5)
    drivers = DriverBatch.replicates(seed=1, count=5, dt=1.0 / 8)
    z = path_engine.simulate_euler_batch(spec, drivers)
    xi = drivers.normals(8, Lane.EULER)
    assert z.shape == (5, 9)
    expected = 0.5 * spec.horizon_T + spec.epsilon * np.sqrt(spec.dt_obs) * xi.sum(axis=1)
    assert np.allclose(z[:, -1], expected)


def test_ode_solutions(make_spec, small_grid):
    spec = make_spec("const-drift", c=1.5, w=0.25)
    z = path_engine.solve_ode("z", spec, small_grid)
    assert z.values[-1] == pytest.approx(0.25 + 1.5 * spec.horizon_T)

    unit = make_spec("unit-sigma", w=0.3)
    z = path_engine.solve_ode("z", unit, small_grid)
    z_bar = path_engine.solve_ode("z_bar", unit, small_grid)
    assert np.allclose(z.values, z_bar.values)
    # dz/dt = sin z from 0.3: tan(z/2) = tan(0.15) e^t
    assert z.values[-1] == pytest.approx(2 * np.arctan(np.tan(0.15) * np.e), rel=1e-8)


def test_mu_of_driftless_unit_model_is_brownian(make_spec, small_grid):
    spec = make_spec("zero-drift")
    driver = path_engine.driver_for(spec, small_grid, seed=6, stream_id=2)
    mu = path_engine.simulate_mu_family("mu", spec, small_grid, driver)
    dW = driver.increments(small_grid.steps_on_horizon(spec))
    assert mu.values[0] == pytest.approx(0.0)
    assert np.allclose(mu.values[1:], np.cumsum(dW), atol=1e-10)


def test_gbar_drift_matches_f_over_sigma2_for_unit_sigma_on_first_interval(unit_spec, small_grid):
    driver = path_engine.driver_for(unit_spec, small_grid, seed=4, stream_id=0)
    gbar = path_engine.simulate_constant_eps("gbar", unit_spec, small_grid, driver)
    xi = path_engine.simulate_constant_eps("f_over_sigma2", unit_spec, small_grid, driver)
    assert gbar.steps == xi.steps
    # the first step uses the level at w for both
    assert gbar.values[1] == xi.values[1]


def test_blow_up_is_reported_with_step(small_grid):
    drift = DriftSpec(eval=lambda x: 1e300 * (1.0 + x * x), lipschitz_M=1e300, origin_bound=1e300)
    spec = ModelSpec(drift=drift, diffusion=constant_sigma(), epsilon=0.1, horizon_T=1.0, n_obs=8)
    driver = path_engine.driver_for(spec, small_grid, seed=0, stream_id=0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(SimulationBlowUp) as exc:
        path_engine.simulate_y(spec, small_grid, driver)
    assert exc.value.exit_code == 3
    assert exc.value.step == 2
