import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.core.errors import ClockOverrun, ConfigurationError
from app.schemas.model import FineGridConfig
from app.schemas.results import ClockKind
from app.sde import path_engine, time_change
from app.sde.paths import KnotPath, SamplePath, StopKind, StoppedPath
from app.sde.time_change import CoeffKind, PiecewiseCoeff



@pytest.fixture
def xi_path(sin_spec, small_grid, driver):
    return path_engine.simulate_constant_eps("f_over_sigma2", sin_spec, small_grid, driver)


def test_unit_sigma_clocks_are_identities(unit_spec, small_grid):
    driver = path_engine.driver_for(unit_spec, small_grid, seed=1, stream_id=0)
    path = path_engine.simulate_y(unit_spec, small_grid, driver)
    for kind in ("rho", "theta", "eta", "A"):
        assert time_change.clock(path, unit_spec, kind, 0.5).value == pytest.approx(0.5, abs=1e-12)
    knots = time_change.a_bar_knots(path, unit_spec)
    assert np.allclose(knots, unit_spec.obs_grid())


def test_constant_sigma_scales_the_clock(make_spec, small_grid):
    spec = make_spec("const-sigma")
    driver = path_engine.driver_for(spec, small_grid, seed=1, stream_id=0)
    path = path_engine.simulate_constant_eps("f_over_sigma2", spec, small_grid, driver)
    assert time_change.clock(path, spec, ClockKind.A, 1.0).value == pytest.approx(4.0)
    assert time_change.clock(path, spec, ClockKind.RHO, 0.5).value == pytest.approx(2.0)
    assert np.allclose(time_change.a_bar_knots(path, spec), 4.0 * spec.obs_grid())
    assert time_change.a_bar_n(path, spec, 0.3).value == pytest.approx(1.2)


def test_clock_bounds_and_overrun(sin_spec, small_grid, driver, xi_path):
    a_t = time_change.clock(xi_path, sin_spec, "A", 1.0).value
    assert 0.25 <= a_t <= 2.25
    y = path_engine.simulate_y(sin_spec, small_grid, driver)
    # a span of T cannot carry theta up to 2T
    unreached = time_change.clock(y, sin_spec, "A", 2.0 * 2.25, strict=False)
    assert not unreached.path_span_ok
    assert unreached.value == y.t_end


def test_stopping_times_are_ordered(sin_spec, xi_path):
    a_t = time_change.stopping_time(xi_path, sin_spec, StopKind.A_T)
    a_bar = time_change.stopping_time(xi_path, sin_spec, StopKind.A_BAR_T_N)
    s = time_change.stopping_time(xi_path, sin_spec, StopKind.S_T_N)
    assert s == pytest.approx(min(a_t, a_bar), abs=1e-12)
    assert time_change.stopping_time(xi_path, sin_spec, StopKind.FIXED_T) == sin_spec.horizon_T


def test_batched_stopping_times_match_single_paths(sin_spec, small_grid, batch):
    bundle = path_engine.simulate_constant_eps_batch("f_over_sigma2", sin_spec, small_grid, batch)
    times = time_change.stopping_times_batch(bundle, sin_spec, "S_T_n")
    for r in (0, 7):
        single = time_change.stopping_time(bundle.row(r), sin_spec, "S_T_n")
        assert times[r] == pytest.approx(single, abs=1e-12)


def test_piecewise_indicator_conventions():
    knots, levels = [0.0, 1.0, 2.0], [10.0, 20.0]
    f_bar = PiecewiseCoeff(CoeffKind.F_BAR_N, knots, levels)
    g_bar = PiecewiseCoeff(CoeffKind.G_BAR_N, knots, levels)
    assert (f_bar(0.0), f_bar(1.0), f_bar(2.0)) == (10.0, 20.0, 0.0)
    assert (g_bar(0.0), g_bar(1.0), g_bar(2.0)) == (0.0, 10.0, 20.0)
    assert g_bar.right_continuous(1.0) == 20.0
    assert g_bar.right_continuous(2.0) == 20.0
    with pytest.raises(ConfigurationError):
        PiecewiseCoeff(CoeffKind.F_BAR_N, knots, [1.0])
    with pytest.raises(ConfigurationError):
        PiecewiseCoeff(CoeffKind.F_BAR_N, [0.0, 0.0, 1.0], levels)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=0.001, max_value=2.999).filter(lambda t: abs(t - round(t)) > 1e-9))
def test_piecewise_sides_agree_off_the_knots(t):
    knots, levels = [0.0, 1.0, 2.0, 3.0], [1.0, -2.0, 5.0]
    left = PiecewiseCoeff(CoeffKind.SIGMA_BAR_N, knots, levels)
    right = PiecewiseCoeff(CoeffKind.B_BAR_N, knots, levels)
    assert left(t) == right(t) == right.right_continuous(t) == levels[int(t)]


def test_piecewise_coeffs_of_a_path(sin_spec, small_grid, driver, xi_path):
    y = path_engine.simulate_y(sin_spec, small_grid, driver)
    f_bar = time_change.piecewise_coeffs(y, sin_spec, "f_bar_n")
    assert np.array_equal(f_bar.knots, sin_spec.obs_grid())
    assert f_bar(0.0) == pytest.approx(float(sin_spec.f(np.asarray(y.values[0]))))
    literal = time_change.piecewise_coeffs(y, sin_spec, "sigma_bar_n", index_convention="from_one")
    assert literal.levels[0] == 0.0
    g_bar = time_change.piecewise_coeffs(xi_path, sin_spec, "g_bar_n")
    assert np.allclose(g_bar.knots, time_change.a_bar_knots(xi_path, sin_spec))


def test_phi_psi_round_trip_for_unit_sigma(unit_spec, small_grid):
    driver = path_engine.driver_for(unit_spec, small_grid, seed=2, stream_id=0)
    y = path_engine.simulate_y(unit_spec, small_grid, driver)
    stopped = time_change.phi_map(y, unit_spec)
    assert stopped.stop_kind is StopKind.A_T
    assert stopped.stop_time == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(stopped.path.values[: y.values.size], y.values, atol=1e-12)
    back = time_change.psi_map(stopped, unit_spec)
    assert np.allclose(back.values, y.values, atol=1e-12)


def test_phi_psi_round_trip(sin_spec, small_grid, driver):
    y = path_engine.simulate_y(sin_spec, small_grid, driver)
    stopped = time_change.phi_map(y, sin_spec)
    assert 0.25 <= stopped.stop_time <= 2.25
    assert isinstance(stopped.path, KnotPath)
    assert np.array_equal(stopped.path.values, y.values)
    back = time_change.psi_map(stopped, sin_spec)
    assert back.steps == y.steps
    assert np.max(np.abs(back.values - y.values)) < 1e-9


def test_phi_resampled_on_the_grid(sin_spec, small_grid, driver):
    y = path_engine.simulate_y(sin_spec, small_grid, driver)
    on_knots = time_change.phi_map(y, sin_spec)
    stopped = time_change.phi_map(y, sin_spec, on_grid=True)
    assert isinstance(stopped.path, SamplePath)
    assert stopped.path.dt == y.dt
    assert stopped.stop_time == on_knots.stop_time <= stopped.path.t_end
    grid_times = stopped.path.times[stopped.path.times <= stopped.stop_time]
    assert np.allclose(stopped.path.value_at(grid_times), on_knots.path.value_at(grid_times), atol=1e-12)
    back = time_change.psi_map(stopped, sin_spec)
    assert back.steps == y.steps
    M, s1sq = sin_spec.drift.lipschitz_M, sin_spec.diffusion.sigma1 ** 2
    bound = 5.0 * y.dt * (M * (1.0 + np.max(np.abs(y.values))) * s1sq + 1.0)
    assert np.max(np.abs(back.values - y.values)) <= bound


def test_phi_clock_gap_is_first_order_in_dt(sin_spec):
    shared = path_engine.driver_for(sin_spec, FineGridConfig(steps_per_interval=128), seed=4, stream_id=0)
    gaps = []
    for spi in (64, 128):
        grid = FineGridConfig(steps_per_interval=spi)
        y = path_engine.simulate_y(sin_spec, grid, shared)
        rho_t = time_change.clock(y, sin_spec, ClockKind.RHO, 1.0).value
        stopped = time_change.phi_map(y, sin_spec)
        a_t = time_change.clock(stopped.path, sin_spec, ClockKind.A, 1.0, strict=False).value
        assert a_t == pytest.approx(stopped.stop_time, abs=1e-12)
        gaps.append(abs(rho_t - a_t))
        assert gaps[-1] <= 5.0 * y.dt * sin_spec.diffusion.sigma1 ** 2
    assert 1.5 <= gaps[0] / gaps[1] <= 2.5


def test_knot_path_clocks(sin_spec):
    path = KnotPath(np.array([0.0, 0.5, 1.5, 2.0]), np.array([0.0, 0.3, -0.2, 0.1]))
    s2 = sin_spec.sigma2(path.values)
    expected = 0.5 * (0.5 * (s2[0] + s2[1]) + (s2[1] + s2[2]) + 0.5 * (s2[2] + s2[3]))
    assert time_change.clock(path, sin_spec, ClockKind.RHO, 2.0).value == pytest.approx(expected)
    theta_end = time_change.clock(path, sin_spec, ClockKind.THETA, 2.0).value
    assert time_change.clock(path, sin_spec, ClockKind.A, theta_end).value == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        time_change.clock(path, sin_spec, ClockKind.A_BAR_N, 0.5)
    with pytest.raises(ClockOverrun):
        time_change.clock(path, sin_spec, ClockKind.RHO, 2.5)
    late = time_change.clock(path, sin_spec, ClockKind.A, theta_end + 1.0, strict=False)
    assert late.value == 2.0 and not late.path_span_ok


def test_psi_reach_tolerance(unit_spec):
    almost = KnotPath(np.array([0.0, 0.5, 1.0 - 1e-12]), np.array([0.0, 1.0, 2.0]))
    back = time_change.psi_map(StoppedPath(almost, almost.t_end, StopKind.A_T), unit_spec)
    assert np.allclose(back.values, [0.0, 1.0, 2.0])
    short = KnotPath(np.array([0.0, 0.5, 0.999]), np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ClockOverrun):
        time_change.psi_map(StoppedPath(short, short.t_end, StopKind.A_T), unit_spec)


def test_psi_needs_a_stopped_at_A_T_path(sin_spec, xi_path):
    with pytest.raises(ConfigurationError):
        time_change.psi_map(StoppedPath(xi_path, 1.0, StopKind.FIXED_T), sin_spec)


def test_reclock_batch_for_unit_sigma(unit_spec, small_grid, batch):
    bundle = path_engine.simulate_y_batch(unit_spec, small_grid, batch.with_dt(small_grid.fine_dt(unit_spec)))
    out = time_change.reclock_batch(bundle, unit_spec, [0.25, 1.0])
    assert out.shape == (batch.size, 2)
    assert np.allclose(out[:, 0], bundle.value_at(0.25), atol=1e-12)
    assert np.allclose(out[:, 1], bundle.values[:, -1], atol=1e-12)


def test_kernel_extension(sin_spec, xi_path):
    stopped = time_change.stop_path(xi_path, sin_spec, StopKind.S_T_N)
    driver = path_engine.driver_for(sin_spec, FineGridConfig(steps_per_interval=8), seed=9, stream_id=0)
    extended = time_change.kernel_extend(stopped, sin_spec, driver)
    assert extended.stop_kind is StopKind.A_T
    assert extended.stop_time >= stopped.stop_time - 1e-12
    assert extended.stop_time <= 2.25 * 1.05
    # the observed segment is kept
    j = int(stopped.stop_time / xi_path.dt)
    assert np.array_equal(extended.path.values[: j + 1], xi_path.values[: j + 1])
    with pytest.raises(ConfigurationError):
        time_change.kernel_extend(StoppedPath(xi_path, 1.0, StopKind.A_T), sin_spec, driver)


def test_accumulator_marks_unreached_levels(sin_spec, small_grid, batch):
    bundle = path_engine.simulate_y_batch(sin_spec, small_grid, batch)
    acc = time_change.ClockAccumulator(bundle, sin_spec)
    assert np.all(np.isnan(acc.a(10.0)))
    assert np.all(acc.rho(1.0) > 0)
