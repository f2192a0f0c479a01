"""
One sampler per experiment of the equivalence chains.

`sample_experiment` returns the paths an experiment observes, with the stop
time of each row when the experiment is a stopped one. Grid-value experiments
(the Euler scheme and the sufficient statistics) come back as bundles on the
observation grid itself.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.errors import ClockOverrun, PathRangeError
from app.schemas.model import ExperimentId, FineGridConfig, ModelSpec
from app.sde import lamperti, path_engine, time_change
from app.sde.brownian import DriverBatch
from app.sde.paths import SNAP, PathBundle, StopKind


@dataclass(frozen=True)
class ExperimentSample:
    tag: ExperimentId
    bundle: PathBundle
    stop_times: Optional[np.ndarray] = None
    stop_kind: Optional[StopKind] = None

    @property
    def on_obs_grid(self) -> bool:
        return self.tag in _GRID_VALUED

    def values_at(self, t: float) -> np.ndarray:
        """Every row's value at t; NaN for rows stopped before t."""
        b = self.bundle
        if t > b.t_end + SNAP * b.dt:
            raise PathRangeError("query beyond the experiment's span", t=t, span=b.t_end)
        out = b.value_at(t)
        if self.stop_times is not None:
            out = np.where(self.stop_times + SNAP * b.dt >= t, out, np.nan)
        return out

    def final_values(self) -> np.ndarray:
        """Value at the stop time, or at the end of the span for unstopped experiments."""
        if self.stop_times is None:
            return np.asarray(self.bundle.values[:, -1], dtype=float)
        ok = ~np.isnan(self.stop_times)
        t = np.where(ok, np.minimum(self.stop_times, self.bundle.t_end), self.bundle.t0)
        return np.where(ok, self.bundle.value_at(t), np.nan)


_GRID_VALUED = {ExperimentId.M7, ExperimentId.N2, ExperimentId.N4, ExperimentId.N6}


def _on_obs_grid(bundle: PathBundle, spec: ModelSpec) -> PathBundle:
    stride = int(round(spec.dt_obs / bundle.dt))
    return PathBundle(0.0, spec.dt_obs, bundle.values[:, : spec.n_obs * stride + 1 : stride], bundle.stream_ids)


def sample_experiment(
    tag: ExperimentId | str,
    spec: ModelSpec,
    grid: FineGridConfig,
    drivers: DriverBatch,
    table: lamperti.TransformTable | None = None,
) -> ExperimentSample:
    """
    M1/N1 y on [0,T]; M2 y_bar; M3 xi stopped at A_T; M4 xi_bar (g_bar drift)
    stopped at its A_bar_T^n; M5 xi at S_T^n; M6 xi at A_bar_T^n; M7 Euler values;
    N2 grid values of y; N3 mu; N4 grid values of mu; N5 mu_bar; N6 grid values
    of mu_bar; zeta_bar on its whole span.
    """
    tag = ExperimentId(tag)
    if tag in (ExperimentId.M1, ExperimentId.N1, ExperimentId.N2):
        bundle = path_engine.simulate_y_batch(spec, grid, drivers)
        if tag is ExperimentId.N2:
            bundle = _on_obs_grid(bundle, spec)
        return ExperimentSample(tag, bundle)
    if tag is ExperimentId.M2:
        return ExperimentSample(tag, path_engine.simulate_y_bar_batch(spec, grid, drivers))
    if tag is ExperimentId.M7:
        z = path_engine.simulate_euler_batch(spec, drivers)
        return ExperimentSample(tag, PathBundle(0.0, spec.dt_obs, z, drivers.stream_ids))
    if tag is ExperimentId.ZETA_BAR:
        return ExperimentSample(tag, path_engine.simulate_constant_eps_batch("zeta_bar", spec, grid, drivers))

    if tag in (ExperimentId.N3, ExperimentId.N4, ExperimentId.N5, ExperimentId.N6):
        form = path_engine.MuForm.MU if tag in (ExperimentId.N3, ExperimentId.N4) else path_engine.MuForm.MU_BAR
        bundle = path_engine.simulate_mu_family_batch(form, spec, grid, drivers, table)
        if tag in (ExperimentId.N4, ExperimentId.N6):
            bundle = _on_obs_grid(bundle, spec)
        return ExperimentSample(tag, bundle)

    form = path_engine.DriftForm.GBAR if tag is ExperimentId.M4 else path_engine.DriftForm.F_OVER_SIGMA2
    bundle = path_engine.simulate_constant_eps_batch(form, spec, grid, drivers)
    kind = {
        ExperimentId.M3: StopKind.A_T,
        ExperimentId.M4: StopKind.A_BAR_T_N,
        ExperimentId.M5: StopKind.S_T_N,
        ExperimentId.M6: StopKind.A_BAR_T_N,
    }[tag]
    stops = time_change.stopping_times_batch(bundle, spec, kind)
    return ExperimentSample(tag, bundle, stops, kind)


def require_stops(sample: ExperimentSample) -> np.ndarray:
    """Stop times of a stopped sample, raising when any row overran its span."""
    if sample.stop_times is None:
        raise PathRangeError("experiment is not a stopped one", tag=str(sample.tag))
    if np.isnan(sample.stop_times).any():
        raise ClockOverrun("stopping time beyond the simulated span", requested=float("nan"), reached=sample.bundle.t_end)
    return sample.stop_times
