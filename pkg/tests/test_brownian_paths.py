import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.core.errors import ConfigurationError, PathRangeError
from app.sde.brownian import BrownianDriver, DriverBatch, Lane, coarsen_factor, standard_normals
from app.sde.paths import KnotPath, PathBundle, SamplePath, StopKind, StoppedPath, interp_uniform


def test_streams_are_prefix_stable():
    short = standard_normals(5, 3, 10)
    long = standard_normals(5, 3, 25)
    assert np.array_equal(short, long[:10])


def test_lanes_and_streams_are_distinct():
    base = standard_normals(5, 3, 50)
    assert not np.array_equal(base, standard_normals(5, 3, 50, Lane.EULER))
    assert not np.array_equal(base, standard_normals(5, 4, 50))
    assert not np.array_equal(base, standard_normals(6, 3, 50))


def test_batch_rows_match_single_drivers():
    batch = DriverBatch.replicates(seed=9, count=4, dt=0.01, first_stream=7)
    z = batch.normals(20)
    for r in range(4):
        assert np.array_equal(z[r], batch.driver(r).normals(20))
    assert batch.shifted(100).stream_ids == (107, 108, 109, 110)


def test_coarse_increments_sum_fine_ones():
    driver = BrownianDriver(seed=1, stream_id=2, dt=0.125)
    fine = driver.increments(8)
    coarse = driver.increments(4, coarsen=2)
    assert np.array_equal(coarse, fine.reshape(4, 2).sum(axis=1))


def test_coarsen_factor():
    assert coarsen_factor(0.5, 0.25) == 2
    assert coarsen_factor(0.25, 0.25) == 1
    with pytest.raises(ConfigurationError):
        coarsen_factor(0.3, 0.25)


def test_interpolation_is_exact_on_knots(rng):
    values = rng.normal(size=41)
    times = np.arange(41) * 0.1
    assert np.array_equal(interp_uniform(values, 0.0, 0.1, times), values)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.0, max_value=2.0), st.lists(st.floats(-5, 5), min_size=3, max_size=30))
def test_interpolation_stays_between_neighbours(t, raw):
    values = np.array(raw)
    dt = 2.0 / (values.size - 1)
    out = float(interp_uniform(values, 0.0, dt, np.array(t)))
    k = min(int(t / dt), values.size - 2)
    lo, hi = sorted((values[k], values[k + 1]))
    assert lo - 1e-12 <= out <= hi + 1e-12


def test_sample_path_queries():
    path = SamplePath(0.0, 0.5, np.array([0.0, 1.0, 3.0]))
    assert path.t_end == 1.0
    assert path.value_at(0.25) == pytest.approx(0.5)
    assert path.value_at(1.0) == 3.0
    assert path.index_of(0.5) == 1
    with pytest.raises(PathRangeError):
        path.value_at(1.5)
    with pytest.raises(PathRangeError):
        path.index_of(0.3)
    assert not path.values.flags.writeable
    with pytest.raises(ConfigurationError):
        SamplePath(0.0, 0.5, np.array([1.0]))
    with pytest.raises(ConfigurationError):
        SamplePath(0.0, 0.5, np.array([1.0, np.nan]))


def test_knot_path_queries():
    path = KnotPath(np.array([0.0, 0.2, 1.0]), np.array([0.0, 1.0, 3.0]))
    assert path.t_end == 1.0 and path.steps == 2
    assert path.dt == pytest.approx(0.5)
    assert path.value_at(0.1) == pytest.approx(0.5)
    assert path.value_at(0.6) == pytest.approx(2.0)
    assert np.array_equal(path.times, path.knots)
    with pytest.raises(PathRangeError):
        path.value_at(1.5)
    assert not path.knots.flags.writeable
    with pytest.raises(ConfigurationError):
        KnotPath(np.array([0.0, 0.5, 0.5]), np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ConfigurationError):
        KnotPath(np.array([0.0, 1.0]), np.array([0.0, 1.0, 2.0]))
    assert StoppedPath(path, 1.0, StopKind.A_T).final_value() == 3.0


def test_stopped_path_bounds():
    path = SamplePath(0.0, 0.5, np.array([0.0, 1.0, 3.0]))
    stopped = StoppedPath(path, 0.75, StopKind.A_T)
    assert stopped.final_value() == pytest.approx(2.0)
    with pytest.raises(PathRangeError):
        StoppedPath(path, 1.5, StopKind.A_T)


def test_bundle_per_row_queries():
    bundle = PathBundle(0.0, 1.0, np.array([[0.0, 2.0], [1.0, 1.0]]))
    assert np.allclose(bundle.value_at(np.array([0.5, 1.0])), [1.0, 1.0])
    assert np.allclose(bundle.value_at(0.25), [0.5, 1.0])
    assert bundle.row(0).value_at(1.0) == 2.0
    with pytest.raises(PathRangeError):
        bundle.value_at(2.0)
