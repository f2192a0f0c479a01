"""
Brownian drivers built on numpy's Philox counter-based generator.

A stream is keyed by (seed, stream_id); a `Lane` selects a disjoint region of
the counter space, so the fine-grid increments, the Euler innovations and the
kernel-extension increments of one replicate never overlap. Normals come from
the inverse normal CDF of uniforms in (0, 1), which keeps the sequence a pure
function of the key and the draw index.

Increments are always drawn at the driver's own (finest) step `dt`; a coarser
simulation sums consecutive groups, which is what the strong-error
self-tests rely on.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.special import ndtri

from app.core.errors import ConfigurationError

_U64 = (1 << 64) - 1
_HALF_ULP = 2.0 ** -54


class Lane(IntEnum):
    FINE = 0
    EULER = 1
    KERNEL = 2
    AUX = 3


def _generator(seed: int, stream_id: int, lane: Lane) -> np.random.Generator:
    key = ((int(seed) & _U64) << 64) | (int(stream_id) & _U64)
    counter = int(lane) << 192
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def standard_normals(seed: int, stream_id: int, count: int, lane: Lane = Lane.FINE) -> np.ndarray:
    """First `count` standard normals of the stream; a longer request extends the same prefix."""
    u = _generator(seed, stream_id, lane).random(count) + _HALF_ULP
    return ndtri(u)


def coarsen_factor(fine_dt: float, driver_dt: float) -> int:
    ratio = fine_dt / driver_dt
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(
            "simulation step must be a whole multiple of the driver step",
            fine_dt=fine_dt, driver_dt=driver_dt,
        )
    return k


@dataclass(frozen=True)
class BrownianDriver:
    """One replicate's Brownian stream at step `dt`."""

    seed: int
    stream_id: int
    dt: float

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigurationError("driver dt must be positive", dt=self.dt)

    def normals(self, count: int, lane: Lane = Lane.FINE) -> np.ndarray:
        return standard_normals(self.seed, self.stream_id, count, lane)

    def increments(self, count: int, coarsen: int = 1, lane: Lane = Lane.FINE) -> np.ndarray:
        """`count` increments over steps of coarsen*dt, each the sum of `coarsen` fine increments."""
        z = self.normals(count * coarsen, lane) * np.sqrt(self.dt)
        if coarsen == 1:
            return z
        return z.reshape(count, coarsen).sum(axis=1)

    def with_stream(self, stream_id: int) -> "BrownianDriver":
        return BrownianDriver(self.seed, stream_id, self.dt)

    def with_dt(self, dt: float) -> "BrownianDriver":
        return BrownianDriver(self.seed, self.stream_id, dt)


@dataclass(frozen=True)
class DriverBatch:
    """Many replicate streams at a common step; row r uses stream_ids[r]."""

    seed: int
    stream_ids: tuple[int, ...]
    dt: float

    def __post_init__(self) -> None:
        if not self.stream_ids:
            raise ConfigurationError("a DriverBatch needs at least one stream")
        if not self.dt > 0:
            raise ConfigurationError("driver dt must be positive", dt=self.dt)
        object.__setattr__(self, "stream_ids", tuple(int(s) for s in self.stream_ids))

    @classmethod
    def of(cls, driver: BrownianDriver) -> "DriverBatch":
        return cls(driver.seed, (driver.stream_id,), driver.dt)

    @classmethod
    def replicates(cls, seed: int, count: int, dt: float, first_stream: int = 0) -> "DriverBatch":
        return cls(seed, tuple(range(first_stream, first_stream + count)), dt)

    @property
    def size(self) -> int:
        return len(self.stream_ids)

    def driver(self, r: int) -> BrownianDriver:
        return BrownianDriver(self.seed, self.stream_ids[r], self.dt)

    def normals(self, count: int, lane: Lane = Lane.FINE) -> np.ndarray:
        out = np.empty((self.size, count))
        for r, sid in enumerate(self.stream_ids):
            out[r] = standard_normals(self.seed, sid, count, lane)
        return out

    def increments(self, count: int, coarsen: int = 1, lane: Lane = Lane.FINE) -> np.ndarray:
        z = self.normals(count * coarsen, lane) * np.sqrt(self.dt)
        if coarsen == 1:
            return z
        return z.reshape(self.size, count, coarsen).sum(axis=2)

    def with_dt(self, dt: float) -> "DriverBatch":
        return DriverBatch(self.seed, self.stream_ids, dt)

    def shifted(self, offset: int) -> "DriverBatch":
        """Same seed, stream ids moved by `offset` (an independent sample of the same size)."""
        return DriverBatch(self.seed, tuple(s + offset for s in self.stream_ids), self.dt)
