from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.core.errors import ConfigurationError
from app.sde import lamperti, model_core, path_engine



@lru_cache(maxsize=None)
def _sin_table():
    spec = model_core.lookup("sin-drift").build(epsilon=0.1, horizon_T=1.0, n_obs=8)
    return spec, lamperti.build_transform(spec)


@pytest.fixture
def sin_table():
    return _sin_table()


@pytest.fixture
def unit_table(make_spec):
    spec = make_spec("unit-sigma")
    return spec, lamperti.build_transform(spec)


def test_transform_is_anchored_and_increasing(sin_table):
    _, table = sin_table
    assert table.F(0.0) == pytest.approx(0.0, abs=1e-14)
    assert np.all(np.diff(table.F_values) > 0)
    lo, hi = table.x_range
    assert lo < 0 < hi


def test_unit_sigma_transform_is_a_rescaling(unit_table):
    spec, table = unit_table
    assert table.F(0.3) == pytest.approx(3.0, rel=1e-9)
    assert lamperti.invert_transform(table, 3.0) == pytest.approx(0.3, rel=1e-9)
    assert lamperti.drift_b(table, spec, 2.0) == pytest.approx(np.sin(0.2) / 0.1, rel=1e-8)


def test_linear_extrapolation_outside_the_table(unit_table):
    _, table = unit_table
    _, hi = table.x_range
    assert table.F(hi + 1.0) == pytest.approx(table.F_values[-1] + 10.0)
    assert lamperti.invert_transform(table, table.F_values[-1] + 10.0) == pytest.approx(hi + 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-3.0, max_value=3.0))
def test_inverse_recovers_the_state(x):
    _, table = _sin_table()
    assert lamperti.invert_transform(table, table.F(x)) == pytest.approx(x, abs=1e-8)


def test_transform_slope_is_one_over_eps_sigma(sin_table):
    spec, table = sin_table
    x = np.linspace(-2.0, 2.0, 9)
    h = 1e-5
    slope = (table.F(x + h) - table.F(x - h)) / (2 * h)
    assert np.allclose(slope, 1.0 / (spec.epsilon * spec.sigma(x)), rtol=1e-6)


def test_b_bounds_hold(sin_table):
    spec, table = sin_table
    assert abs(lamperti.drift_b(table, spec, 0.0)) <= lamperti.b_origin_bound(spec)
    empirical = lamperti.empirical_b_lipschitz(table, spec, pairs=2000, seed=1)
    assert 0 < empirical <= lamperti.b_lipschitz_bound(spec)


def test_table_is_tied_to_epsilon(sin_table):
    spec, table = sin_table
    with pytest.raises(ConfigurationError):
        lamperti.drift_b(table, spec.with_epsilon(0.2), 0.0)


def test_build_arguments_are_checked(sin_table):
    spec, _ = sin_table
    with pytest.raises(ConfigurationError):
        lamperti.build_transform(spec, knot_count=1)
    with pytest.raises(ConfigurationError):
        lamperti.build_transform(spec, x_range=(1.0, 1.0))


def test_transform_path_maps_pointwise(sin_table, small_grid):
    spec, table = sin_table
    driver = path_engine.driver_for(spec, small_grid, seed=1, stream_id=0)
    y = path_engine.simulate_y(spec, small_grid, driver)
    image = lamperti.transform_path(table, y)
    assert image.dt == y.dt
    assert np.allclose(image.values, table.F(y.values))
