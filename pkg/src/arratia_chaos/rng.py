"""Seeded Brownian sample paths on uniform time grids.

Every random draw goes through a :class:`SeedLedger`, which maps
(master seed, stream id, substream path, chunk index) to an independent
Philox generator.  Paths are produced in fixed-size chunks so the first
``k`` paths of a batch do not depend on how many paths were requested.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# paths per generator chunk; changing this changes every stream
CHUNK = 2048


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * horizon / steps on [0, horizon].

    ``steps == 0`` (with ``horizon == 0``) is the degenerate single-point
    grid used for empty post-collision tails; :func:`make_grid` never
    returns it.
    """

    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 0 or not np.isfinite(self.horizon) or self.horizon < 0:
            raise GridError(f"bad grid: horizon={self.horizon}, steps={self.steps}")
        if (self.steps == 0) != (self.horizon == 0):
            raise GridError("a zero-length grid must have zero steps")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps if self.steps else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Largest k with t_k <= t."""
        if self.steps == 0:
            return 0
        k = int(np.floor(t / self.dt + 1e-9))
        return min(max(k, 0), self.steps)

    def sub(self, steps: int) -> "TimeGrid":
        """Grid with the same spacing covering the first ``steps`` steps."""
        return TimeGrid(steps * self.dt, steps)

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.steps % factor:
            raise GridError(f"cannot coarsen {self.steps} steps by {factor}")
        return TimeGrid(self.horizon, self.steps // factor)


def make_grid(T: float, M: int) -> TimeGrid:
    if not (np.isfinite(T) and T > 0):
        raise GridError(f"horizon must be positive, got {T}")
    if int(M) != M or M < 1:
        raise GridError(f"steps must be a positive integer, got {M}")
    return TimeGrid(float(T), int(M))


@dataclass
class SeedLedger:
    """Provenance of a random stream.

    ``draws`` counts variates handed out; it is bookkeeping only and does
    not take part in equality.
    """

    master_seed: int
    stream_id: int = 0
    path: tuple = ()
    draws: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0 or any(p < 0 for p in self.path):
            raise ValueError("seed components must be non-negative integers")
        self.path = tuple(int(p) for p in self.path)

    def child(self, *keys: int) -> "SeedLedger":
        return SeedLedger(self.master_seed, self.stream_id, self.path + tuple(keys))

    def generator(self, chunk: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence([self.master_seed, self.stream_id, *self.path, chunk])
        return np.random.Generator(np.random.Philox(ss))

    def note(self, count: int) -> None:
        self.draws += int(count)

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "stream_id": self.stream_id,
                "path": list(self.path), "draws": self.draws}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedLedger":
        return cls(int(d["master_seed"]), int(d.get("stream_id", 0)), tuple(d.get("path", ())))


def as_ledger(seed) -> SeedLedger:
    if isinstance(seed, SeedLedger):
        return seed
    return SeedLedger(int(seed))


@dataclass(frozen=True)
class SamplePath:
    """One sampled path, ``values`` has shape (n, M+1).

    ``uniforms`` (shape (max(n-1, 1), M)) are the auxiliary bridge-crossing
    uniforms drawn together with the increments; boundary detection uses
    them so that every consumer of the same path sees the same exit time.
    """

    grid: TimeGrid
    start: np.ndarray
    values: np.ndarray
    uniforms: np.ndarray | None = None
    ledger: SeedLedger | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.grid.steps + 1:
            raise ValueError(f"values shape {v.shape} does not match grid with {self.grid.steps} steps")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(-1))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)


@dataclass(frozen=True)
class PathBatch:
    """``N`` paths sharing a grid: values (N, n, M+1), uniforms (N, B, M)."""

    grid: TimeGrid
    values: np.ndarray
    uniforms: np.ndarray | None = None
    ledger: SeedLedger | None = None

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=2)

    def path(self, i: int) -> SamplePath:
        u = None if self.uniforms is None else self.uniforms[i]
        return SamplePath(self.grid, self.values[i, :, 0], self.values[i], u, self.ledger)

    def __getitem__(self, sl) -> "PathBatch":
        u = None if self.uniforms is None else self.uniforms[sl]
        return PathBatch(self.grid, self.values[sl], u, self.ledger)

    @classmethod
    def from_paths(cls, paths: list[SamplePath]) -> "PathBatch":
        vals = np.stack([p.values for p in paths])
        us = None
        if all(p.uniforms is not None for p in paths):
            us = np.stack([p.uniforms for p in paths])
        return cls(paths[0].grid, vals, us, paths[0].ledger)


def draw_noise(n: int, grid: TimeGrid, count: int, ledger: SeedLedger, chunk: int):
    """Gaussian increments (count, n, M) and bridge uniforms (count, B, M) for one chunk."""
    rng = ledger.generator(chunk)
    M = grid.steps
    dW = rng.standard_normal((count, n, M))
    dW *= np.sqrt(grid.dt)
    U = rng.random((count, max(n - 1, 1), M))
    ledger.note(dW.size + U.size)
    return dW, U


def cumulate(start: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Path values from start (count, n) or (n,) and increments (count, n, M)."""
    out = np.empty(dW.shape[:-1] + (dW.shape[-1] + 1,))
    out[..., 0] = 0.0
    np.cumsum(dW, axis=-1, out=out[..., 1:])
    out += np.asarray(start, dtype=float)[..., None]
    return out


def iter_chunks(N: int):
    """(chunk index, offset, size) triples covering N paths."""
    for c, lo in enumerate(range(0, N, CHUNK)):
        yield c, lo, min(CHUNK, N - lo)


def brownian_batch(start, grid: TimeGrid, N: int, seed) -> PathBatch:
    """N independent n-dim Brownian paths from ``start``.

    ``start`` is either (n,) or (N, n).
    """
    ledger = as_ledger(seed)
    start = np.asarray(start, dtype=float)
    n = start.shape[-1]
    if not np.all(np.isfinite(start)):
        raise ValueError("start must be finite")
    vals = np.empty((N, n, grid.steps + 1))
    us = np.empty((N, max(n - 1, 1), grid.steps))
    for c, lo, size in iter_chunks(N):
        dW, U = draw_noise(n, grid, size, ledger, c)
        s = start if start.ndim == 1 else start[lo:lo + size]
        vals[lo:lo + size] = cumulate(s, dW)
        us[lo:lo + size] = U
    return PathBatch(grid, vals, us, ledger)


def sample_brownian(start, grid: TimeGrid, seed) -> SamplePath:
    """A single path; identical to path 0 of ``brownian_batch`` with the same seed."""
    return brownian_batch(np.asarray(start, dtype=float).reshape(-1), grid, 1, seed).path(0)
