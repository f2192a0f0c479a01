import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from app.core.errors import ConfigurationError, DegenerateRatePoint, ReplicateDropError
from app.schemas.model import FineGridConfig
from app.schemas.results import MCEstimate
from app.sde.paths import StopKind
from app.stats import likelihood, metrics
from app.stats.metrics import ReplicatePool


def _estimate(mean: float, se: float = 0.0) -> MCEstimate:
    return MCEstimate(mean=mean, std_error=se, replicates=100, seed=0)


def test_pairwise_sum():
    assert metrics.pairwise_sum([]) == 0.0
    assert metrics.pairwise_sum([1, 2, 3, 4, 5]) == 15.0
    assert metrics.pairwise_sum(np.full(1000, 0.1)) == pytest.approx(100.0)


def test_summarize_drops_rare_non_finite_rows():
    values = np.ones(2000)
    values[17] = np.nan
    est = metrics.summarize(values, seed=3, stream_ids=range(2000), what="test")
    assert est.dropped == 1
    assert est.replicates == 1999
    assert est.mean == 1.0
    assert est.std_error == 0.0


def test_summarize_rejects_many_drops():
    values = np.ones(100)
    values[:2] = np.nan
    with pytest.raises(ReplicateDropError) as exc:
        metrics.summarize(values, seed=3, stream_ids=range(100), what="test")
    assert exc.value.exit_code == 3


def test_too_few_replicates(sin_spec, small_grid):
    with pytest.raises(ConfigurationError):
        metrics.estimate_clock_gap(sin_spec, small_grid, replicates=50, seed=1)


def test_estimates_do_not_depend_on_worker_count(sin_spec):
    grid = FineGridConfig(steps_per_interval=4)
    one = metrics.estimate_clock_gap(sin_spec, grid, 100, seed=7, pool=ReplicatePool(1, chunk=16))
    four = metrics.estimate_clock_gap(sin_spec, grid, 100, seed=7, pool=ReplicatePool(4, chunk=16))
    assert one == four
    assert one.mean > 0


def test_clock_gap_vanishes_for_unit_sigma(unit_spec):
    grid = FineGridConfig(steps_per_interval=4)
    est = metrics.estimate_clock_gap(unit_spec, grid, 100, seed=1, pool=ReplicatePool(1))
    assert est.mean < 1e-9


def test_hellinger_bound_and_drift_gap_agree(sin_spec):
    grid = FineGridConfig(steps_per_interval=4)
    pool = ReplicatePool(1)
    gap = metrics.estimate_drift_gap_l2(sin_spec, grid, 100, seed=2, pool=pool)
    bound = metrics.estimate_hellinger_bound(sin_spec, grid, 100, seed=2, pool=pool)
    expected = 4.0 * math.sqrt(gap.mean / (8.0 * sin_spec.epsilon ** 2))
    assert bound.mean == pytest.approx(expected)


def test_b_gap_is_positive(sin_spec):
    est = metrics.estimate_b_gap(sin_spec, FineGridConfig(steps_per_interval=4), 100, seed=2, pool=ReplicatePool(1))
    assert est.mean > 0
    assert est.dropped == 0


def test_tv_of_constant_drifts_matches_closed_form(sin_spec):
    grid = FineGridConfig(steps_per_interval=4)
    gap = sin_spec.epsilon / math.sqrt(sin_spec.horizon_T)
    h1 = likelihood.constant_hypothesis(gap, sin_spec)
    h0 = likelihood.zero_hypothesis(sin_spec, span="horizon")
    est = metrics.estimate_tv_from_lr(sin_spec, h1, h0, StopKind.FIXED_T, 1000, seed=5, grid=grid)
    exact = 2.0 * norm.cdf(0.5) - 1.0
    assert abs(est.mean - exact) <= 4.0 * est.std_error


def test_tv_integrand_is_bounded():
    out = metrics.tv_integrand(np.array([800.0, 0.0, -800.0, np.nan]))
    assert out[0] == 0.0 and out[1] == 0.0
    assert out[2] == pytest.approx(1.0)
    assert np.isnan(out[3])


@given(st.floats(-50.0, 50.0))
def test_tv_integrand_is_the_positive_part(ell):
    assert metrics.tv_integrand(ell) == pytest.approx(max(0.0, 1.0 - math.exp(ell)), abs=1e-12)


def test_tv_of_well_separated_constant_drifts(sin_spec):
    grid = FineGridConfig(steps_per_interval=4)
    h1 = likelihood.constant_hypothesis(8.0 * sin_spec.epsilon, sin_spec)
    h0 = likelihood.zero_hypothesis(sin_spec, span="horizon")
    est = metrics.estimate_tv_from_lr(sin_spec, h1, h0, StopKind.FIXED_T, 1000, seed=5, grid=grid)
    assert est.dropped == 0
    assert est.mean == pytest.approx(2.0 * norm.cdf(4.0) - 1.0, abs=1e-3)


def test_girsanov_mean_is_one(sin_spec):
    grid = FineGridConfig(steps_per_interval=4)
    h1 = likelihood.f_over_sigma2_hypothesis(sin_spec)
    h0 = likelihood.zero_hypothesis(sin_spec)
    est = metrics.estimate_girsanov_mean(sin_spec, h1, h0, 400, seed=6, grid=grid)
    assert abs(est.mean - 1.0) <= 4.0 * est.std_error


def test_stop_rule_is_checked(sin_spec):
    h = likelihood.zero_hypothesis(sin_spec)
    with pytest.raises(ConfigurationError):
        metrics.estimate_tv_from_lr(sin_spec, h, h, StopKind.A_T, 100, seed=1)


def test_moments(sin_spec):
    grid = FineGridConfig(steps_per_interval=4)
    m2 = metrics.estimate_moment(sin_spec, "M1", 2, 1.0, 100, seed=1, grid=grid)
    m4 = metrics.estimate_moment(sin_spec, "M1", 4, 1.0, 100, seed=1, grid=grid)
    assert 0 < m4.mean
    # Jensen on the same replicates
    assert m2.mean ** 2 <= m4.mean * (1 + 1e-12)
    with pytest.raises(ConfigurationError):
        metrics.estimate_moment(sin_spec, "M1", 3, 1.0, 100, seed=1, grid=grid)


def test_fit_rate_recovers_exact_power_law():
    points = [(n, _estimate(3.0 / n)) for n in (8, 16, 32, 64)]
    table = metrics.fit_rate(points, axis="n", suite="s", quantity="q")
    assert table.fitted_slope == pytest.approx(-1.0, abs=1e-12)
    assert table.slope_ci_halfwidth == pytest.approx(0.0, abs=1e-9)
    assert math.exp(table.intercept) == pytest.approx(3.0)
    assert [p.n for p in table.points] == [8, 16, 32, 64]


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-3.0, max_value=3.0), st.floats(min_value=1e-3, max_value=1e3))
def test_fit_rate_slope_property(slope, scale):
    eps = [0.01, 0.02, 0.05, 0.1, 0.2]
    points = [(e, _estimate(scale * e ** slope, 0.01 * scale * e ** slope)) for e in eps]
    table = metrics.fit_rate(points, axis="epsilon")
    assert table.fitted_slope == pytest.approx(slope, abs=1e-9)
    assert table.points[0].epsilon == 0.01


def test_fit_rate_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        metrics.fit_rate([(n, _estimate(1.0 / n)) for n in (8, 16, 32)])
    with pytest.raises(DegenerateRatePoint):
        metrics.fit_rate([(n, _estimate(0.0 if n == 16 else 1.0 / n)) for n in (8, 16, 32, 64)])
    with pytest.raises(ConfigurationError):
        metrics.fit_rate([(n, _estimate(1.0 / n)) for n in (8, 8, 32, 64)])


def test_compare_slope_hypotheses():
    noise = (1.0, 1.05, 0.95, 1.02)
    points = [(e, _estimate(e ** 2 * k)) for e, k in zip((0.05, 0.1, 0.2, 0.4), noise)]
    table = metrics.fit_rate(points, axis="epsilon")
    name, inside = metrics.compare_slope_hypotheses(table, {"first order": 1.0, "second order": 2.0})
    assert name == "second order"
    assert inside
    with pytest.raises(ConfigurationError):
        metrics.compare_slope_hypotheses(table, {})


def test_rate_expressions():
    assert metrics.theorem_one_rate(1, 1.0) == pytest.approx(1.0 + 2.0 ** 0.25)
    assert metrics.prop_two_rate(1, 1.0) == pytest.approx(math.sqrt(2.0))
    assert metrics.prop_two_rate(100, 0.1) == pytest.approx(math.sqrt(0.01 + 0.01))


def test_effective_sample_size():
    assert metrics.effective_sample_size(np.zeros(50)) == pytest.approx(50.0)
    assert metrics.effective_sample_size(np.array([0.0, -1e3])) == pytest.approx(1.0)
