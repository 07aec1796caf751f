"""Driving noise: the base space of a random dynamical system.

A :class:`NoiseSample` is one realized noise path stored on a uniform
two-sided time grid.  Entry ``k`` of ``values`` belongs to the interval
``[k*dt, (k+1)*dt)`` measured from the sample's current time origin, so
the base flow ``theta_t`` is nothing more than an integer index shift.

Three kinds of paths are supported:

* ``wiener``   -- values are Brownian increments ``W((k+1)dt) - W(k dt)``;
* ``ou``       -- values are stationary Ornstein-Uhlenbeck states at the
  left end of each interval (exact AR(1) discretization);
* ``constant`` -- values are identically zero and every shift is a no-op.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("wiener", "ou", "constant")
DUMP_MAGIC = b"RDSN1"

_TIME_TOL = 1e-9


class NoiseError(ValueError):
    pass


class HorizonExhausted(NoiseError):
    """A shift or integration needed noise beyond the generated horizon."""


def steps_for(t: float, dt: float) -> int:
    """Convert a time to a whole number of ``dt`` steps.

    Raises NoiseError if ``t`` is not a multiple of ``dt``.
    """
    k = round(t / dt)
    if abs(k * dt - t) > _TIME_TOL * max(1.0, abs(t)):
        raise NoiseError(f"time {t!r} is not a multiple of dt={dt!r}")
    return int(k)


@dataclass(frozen=True, eq=False)
class NoiseSample:
    kind: str
    dt: float
    horizon: float
    seed: int
    values: np.ndarray = field(repr=False)
    origin: int = 0

    @property
    def half_steps(self) -> int:
        return self.values.shape[0] // 2

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def offset(self) -> int:
        """Steps by which this sample is shifted relative to its generation."""
        return self.origin - self.half_steps

    def forward_room(self) -> int:
        return self.values.shape[0] - self.origin

    def backward_room(self) -> int:
        return self.origin

    def shift(self, t: float) -> "NoiseSample":
        """Return ``theta_t`` applied to this sample."""
        k = steps_for(t, self.dt)
        return self.shift_steps(k)

    def shift_steps(self, k: int) -> "NoiseSample":
        if self.kind == "constant" or k == 0:
            return self
        new_origin = self.origin + k
        if not 0 <= new_origin <= self.values.shape[0]:
            raise HorizonExhausted(
                f"shift by {k} steps ({k * self.dt:g} time units) leaves the "
                f"horizon of sample seed={self.seed} (usable: -{self.backward_room()}"
                f"..+{self.forward_room()} steps)"
            )
        return NoiseSample(self.kind, self.dt, self.horizon, self.seed, self.values, new_origin)

    def window(self, start: int, n: int) -> np.ndarray:
        """Values of the ``n`` intervals beginning ``start`` steps after the origin."""
        if n < 0:
            raise ValueError("n must be non-negative")
        if self.kind == "constant":
            return np.zeros((n, self.channels))
        lo = self.origin + start
        hi = lo + n
        if lo < 0 or hi > self.values.shape[0]:
            raise HorizonExhausted(
                f"noise needed on steps [{start}, {start + n}) relative to the origin, "
                f"but sample seed={self.seed} only covers "
                f"[-{self.backward_room()}, {self.forward_room()})"
            )
        return self.values[lo:hi]

    def reflect(self) -> "NoiseSample":
        """Time reflection ``s -> -s`` of the path about the current origin.

        Increments change sign, states do not.  Used to build time-reversed
        cocycles.
        """
        if self.kind == "constant":
            return self
        n = self.values.shape[0]
        # interval k of the reflection is interval -k-1 of the original
        idx = 2 * self.origin - 1 - np.arange(n)
        if idx.min() < 0 or idx.max() >= n:
            # keep only the symmetric part around the origin
            room = min(self.origin, n - self.origin)
            vals = self.values[self.origin - room:self.origin + room][::-1]
            origin = room
        else:
            vals = self.values[idx]
            origin = self.origin
        if self.kind == "wiener":
            vals = -vals
        vals = np.ascontiguousarray(vals)
        vals.flags.writeable = False
        return NoiseSample(self.kind, self.dt, self.horizon, self.seed, vals, origin)

    def same_path(self, other: "NoiseSample") -> bool:
        if (self.kind, self.dt, self.horizon, self.seed) != (other.kind, other.dt, other.horizon, other.seed):
            return False
        if self.kind == "constant":
            return self.channels == other.channels
        return self.origin == other.origin and np.array_equal(self.values, other.values)

    def __eq__(self, other):
        if not isinstance(other, NoiseSample):
            return NotImplemented
        return self.same_path(other)

    __hash__ = None


@dataclass(frozen=True)
class SampleEnsemble:
    samples: tuple
    kind: str
    dt: float
    horizon: float

    @property
    def count(self) -> int:
        return len(self.samples)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def seeds(self):
        return [s.seed for s in self.samples]


def _validate(kind, dt, horizon):
    if kind not in KINDS:
        raise NoiseError(f"unknown noise kind {kind!r}; expected one of {KINDS}")
    if not dt > 0:
        raise NoiseError("dt must be positive")
    if not horizon > 0:
        raise NoiseError("horizon must be positive")


def generate_sample(kind, seed, dt, horizon, channels=1, ou_rate=1.0, ou_scale=1.0) -> NoiseSample:
    """Generate one two-sided path on ``[-horizon, horizon]``."""
    _validate(kind, dt, horizon)
    m = int(math.ceil(horizon / dt - _TIME_TOL))
    n = 2 * m
    rng = np.random.default_rng(seed)
    if kind == "wiener":
        vals = rng.standard_normal((n, channels)) * math.sqrt(dt)
    elif kind == "ou":
        a = math.exp(-ou_rate * dt)
        b = ou_scale * math.sqrt(1.0 - a * a)
        z = rng.standard_normal((n, channels))
        vals = np.empty((n, channels))
        vals[0] = ou_scale * z[0]
        for k in range(1, n):
            vals[k] = a * vals[k - 1] + b * z[k]
    else:
        vals = np.zeros((n, channels))
    vals.flags.writeable = False
    return NoiseSample(kind, float(dt), float(horizon), int(seed), vals, m)


def derive_seeds(master_seed: int, count: int) -> list:
    ss = np.random.SeedSequence(master_seed)
    words = ss.generate_state(count, dtype=np.uint64)
    seeds = [int(w) for w in words]
    if len(set(seeds)) != count:  # pragma: no cover - 64-bit collision
        raise NoiseError("seed collision; choose another master seed")
    return seeds


def generate_ensemble(kind, count, dt, horizon, master_seed, channels=1, ou_rate=1.0, ou_scale=1.0) -> SampleEnsemble:
    """Generate ``count`` independent samples, reproducible from ``master_seed``."""
    _validate(kind, dt, horizon)
    if count < 1:
        raise NoiseError("ensemble size must be at least 1")
    samples = tuple(
        generate_sample(kind, s, dt, horizon, channels, ou_rate, ou_scale)
        for s in derive_seeds(master_seed, count)
    )
    return SampleEnsemble(samples, kind, float(dt), float(horizon))


def dump_ensemble(ens: SampleEnsemble, path) -> None:
    """Write an ensemble in the versioned ``RDSN1`` binary format.

    Layout: magic, little-endian uint32 header length, UTF-8 JSON header
    (kind, dt, horizon, count, channels, steps, origins, seeds), then the
    raw float64 values of every sample in order.
    """
    first = ens.samples[0]
    header = {
        "kind": ens.kind,
        "dt": repr(ens.dt),
        "horizon": repr(ens.horizon),
        "count": ens.count,
        "channels": first.channels,
        "steps": first.values.shape[0],
        "origins": [s.origin for s in ens.samples],
        "seeds": [str(s.seed) for s in ens.samples],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for s in ens.samples:
            fh.write(np.ascontiguousarray(s.values, dtype="<f8").tobytes())


def load_ensemble(path) -> SampleEnsemble:
    data = Path(path).read_bytes()
    if data[:5] != DUMP_MAGIC:
        raise NoiseError(f"{path}: not an RDSN1 noise dump")
    (hlen,) = struct.unpack_from("<I", data, 5)
    header = json.loads(data[9:9 + hlen])
    dt, horizon = float(header["dt"]), float(header["horizon"])
    steps, ch = header["steps"], header["channels"]
    pos = 9 + hlen
    size = steps * ch * 8
    samples = []
    for origin, seed in zip(header["origins"], header["seeds"]):
        vals = np.frombuffer(data, dtype="<f8", count=steps * ch, offset=pos).reshape(steps, ch).astype(float)
        vals.flags.writeable = False
        pos += size
        samples.append(NoiseSample(header["kind"], dt, horizon, int(seed), vals, origin))
    return SampleEnsemble(tuple(samples), header["kind"], dt, horizon)
