"""
Continuous paths stored on a uniform fine grid with linear interpolation.

`SamplePath` is one path; `PathBundle` holds many paths on a shared grid (one
row per replicate) and is what the batched simulators produce. `KnotPath` is
the uneven-knot form a time change produces. All are immutable; the arrays
they expose are read-only views.
"""

from dataclasses import dataclass, field
from app.core.compat import StrEnum

import numpy as np

from app.core.errors import ConfigurationError, PathRangeError

# positions within this many grid steps of a knot snap onto it, so grid values are read bit-exactly
SNAP = 1e-9


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def interp_uniform(values: np.ndarray, t0: float, dt: float, times) -> np.ndarray:
    """
    Linear interpolation of rows of `values` (shape (..., N)) at `times`.

    `times` broadcasts against the leading shape of `values` plus an optional
    trailing query axis: for a bundle of R rows, pass shape (R,) for one query
    per row or (R, k) for k queries per row. Out-of-span queries are the
    caller's responsibility.
    """
    times = np.asarray(times, dtype=float)
    n_last = values.shape[-1] - 1
    pos = (times - t0) / dt
    nearest = np.rint(pos)
    pos = np.where(np.abs(pos - nearest) < SNAP, nearest, pos)
    idx = np.clip(np.floor(pos).astype(np.int64), 0, max(n_last - 1, 0))
    frac = pos - idx
    if values.ndim == 1:
        lo = values[idx]
        hi = values[np.minimum(idx + 1, n_last)]
    else:
        squeeze = times.ndim == values.ndim - 1
        if squeeze:
            idx, frac = idx[..., None], frac[..., None]
        lo = np.take_along_axis(values, idx, axis=-1)
        hi = np.take_along_axis(values, np.minimum(idx + 1, n_last), axis=-1)
        if squeeze:
            lo, hi, frac = lo[..., 0], hi[..., 0], frac[..., 0]
    return np.where(frac == 0.0, lo, np.where(frac == 1.0, hi, lo + frac * (hi - lo)))


@dataclass(frozen=True)
class SamplePath:
    """One path: `values[k]` is the ordinate at time t0 + k*dt."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.ndim != 1 or values.size < 2:
            raise ConfigurationError("a SamplePath needs at least two ordinates", shape=values.shape)
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("SamplePath values must be finite")
        if not self.dt > 0:
            raise ConfigurationError("SamplePath dt must be positive", dt=self.dt)
        object.__setattr__(self, "values", values)

    @property
    def steps(self) -> int:
        return self.values.size - 1

    @property
    def t_end(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.values.size) * self.dt

    def covers(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        tol = SNAP * self.dt
        return bool(np.all((t >= self.t0 - tol) & (t <= self.t_end + tol)))

    def value_at(self, t):
        """Linear interpolant at t (scalar or array); outside the span is an error."""
        if not self.covers(t):
            raise PathRangeError(
                "query outside path span", query=np.asarray(t).tolist(), span=(self.t0, self.t_end)
            )
        out = interp_uniform(self.values, self.t0, self.dt, t)
        return float(out) if np.ndim(out) == 0 else out

    def index_of(self, t: float) -> int:
        """Index of the knot at time t; t must sit on the grid."""
        pos = (t - self.t0) / self.dt
        k = int(round(pos))
        if abs(pos - k) > SNAP or not 0 <= k <= self.steps:
            raise PathRangeError("time is not a grid knot of this path", t=t, dt=self.dt)
        return k

    def head(self, steps: int) -> "SamplePath":
        return SamplePath(self.t0, self.dt, self.values[: steps + 1])


@dataclass(frozen=True)
class KnotPath:
    """
    One path on strictly increasing, uneven knots: `values[k]` is the ordinate
    at `knots[k]`, linear in between. Re-clocked paths keep the images of the
    source grid as knots so no ordinate is re-interpolated.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        knots, values = _frozen(self.knots), _frozen(self.values)
        if values.ndim != 1 or values.size < 2 or knots.shape != values.shape:
            raise ConfigurationError("a KnotPath needs matching knots and values, at least two", shape=values.shape)
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(knots))):
            raise ConfigurationError("KnotPath knots and values must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ConfigurationError("KnotPath knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def steps(self) -> int:
        return self.values.size - 1

    @property
    def t0(self) -> float:
        return float(self.knots[0])

    @property
    def t_end(self) -> float:
        return float(self.knots[-1])

    @property
    def dt(self) -> float:
        """Mean knot spacing; sets the snapping tolerance."""
        return (self.t_end - self.t0) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.knots

    def covers(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        tol = SNAP * self.dt
        return bool(np.all((t >= self.t0 - tol) & (t <= self.t_end + tol)))

    def value_at(self, t):
        if not self.covers(t):
            raise PathRangeError(
                "query outside path span", query=np.asarray(t).tolist(), span=(self.t0, self.t_end)
            )
        out = np.interp(t, self.knots, self.values)
        return float(out) if np.ndim(out) == 0 else out


class StopKind(StrEnum):
    A_T = "A_T"
    A_BAR_T_N = "A_bar_T_n"
    S_T_N = "S_T_n"
    FIXED_T = "fixed_T"


@dataclass(frozen=True)
class StoppedPath:
    """A path observed only on [0, stop_time]."""

    path: SamplePath | KnotPath
    stop_time: float
    stop_kind: StopKind

    def __post_init__(self) -> None:
        if self.stop_time < 0 or self.stop_time > self.path.t_end + SNAP * self.path.dt:
            raise PathRangeError(
                "stop_time beyond path span", stop_time=self.stop_time, span=self.path.t_end
            )

    def final_value(self) -> float:
        return self.path.value_at(min(self.stop_time, self.path.t_end))


@dataclass(frozen=True)
class PathBundle:
    """R paths sharing one uniform grid: `values` has shape (R, N)."""

    t0: float
    dt: float
    values: np.ndarray
    stream_ids: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[1] < 2:
            raise ConfigurationError("a PathBundle needs shape (R, N>=2)", shape=values.shape)
        object.__setattr__(self, "values", values)

    @property
    def replicates(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def t_end(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.values.shape[1]) * self.dt

    def row(self, i: int) -> SamplePath:
        return SamplePath(self.t0, self.dt, self.values[i])

    def value_at(self, t) -> np.ndarray:
        """Interpolate every row at t: scalar t, per-row times (R,), or (R, k)."""
        t = np.asarray(t, dtype=float)
        tol = SNAP * self.dt
        if np.any(t < self.t0 - tol) or np.any(t > self.t_end + tol):
            raise PathRangeError("query outside bundle span", span=(self.t0, self.t_end))
        if t.ndim == 0:
            return interp_uniform(self.values, self.t0, self.dt, np.full(self.replicates, float(t)))
        return interp_uniform(self.values, self.t0, self.dt, t)

    @classmethod
    def from_path(cls, path: SamplePath) -> "PathBundle":
        return cls(path.t0, path.dt, path.values[None, :])
