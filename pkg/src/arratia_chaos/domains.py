"""Domains G with a boundary, and bridge-corrected exit detection on a grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class WeylChamber:
    """S^n = {x_1 < ... < x_n}; barriers are the n-1 adjacent gaps."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("chamber dimension must be >= 1")

    @property
    def dim(self) -> int:
        return self.n

    @property
    def barriers(self) -> int:
        return max(self.n - 1, 0)

    # the gap of two independent unit Brownian motions has variance 2 per unit time
    var_rate = 2.0

    def distances(self, x: np.ndarray) -> np.ndarray:
        return np.diff(x, axis=-1) if self.n > 1 else np.zeros(x.shape[:-1] + (0,))

    def contains(self, x) -> np.ndarray:
        return np.all(self.distances(np.asarray(x, dtype=float)) > 0, axis=-1)

    def check_start(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.n:
            raise DomainError(f"start has {u.size} coordinates, chamber S^{self.n} needs {self.n}")
        if not np.all(np.isfinite(u)):
            raise DomainError("start must be finite")
        if not self.contains(u):
            raise DomainError(f"start {u.tolist()} is not strictly increasing (must lie in S^{self.n})")
        return u

    @property
    def key(self) -> str:
        return f"S{self.n}"


@dataclass(frozen=True)
class HalfLine:
    """{x > boundary} in one dimension."""

    boundary: float = 0.0
    n = 1
    dim = 1
    barriers = 1
    var_rate = 1.0

    def distances(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[..., :1] - self.boundary

    def contains(self, x) -> np.ndarray:
        return self.distances(np.asarray(x, dtype=float))[..., 0] > 0

    def check_start(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != 1 or not np.isfinite(u[0]) or u[0] <= self.boundary:
            raise DomainError(f"start must be a single point above {self.boundary}")
        return u

    @property
    def key(self) -> str:
        return f"H{self.boundary:g}"


def parse_domain(spec: str, n: int | None = None):
    s = spec.strip().lower()
    if s in ("halfline", "half-line", "h"):
        return HalfLine()
    if s.startswith("s") and s[1:].isdigit():
        return WeylChamber(int(s[1:]))
    if s in ("weyl", "chamber") and n:
        return WeylChamber(n)
    raise DomainError(f"unknown domain '{spec}'")


@dataclass
class Exit:
    """First exit per path: grid step (-1 if none), time (inf if none), barrier."""

    step: np.ndarray
    tau: np.ndarray
    barrier: np.ndarray
    fired: np.ndarray  # (N, B) barriers that fired in the exit step


def first_exit(dist: np.ndarray, dt: float, uniforms: np.ndarray | None = None,
               var_rate: float = 2.0, active: np.ndarray | None = None,
               from_step: np.ndarray | None = None, t0: float = 0.0) -> Exit:
    """First grid step in which some barrier distance is crossed.

    ``dist`` is (N, B, K+1).  A step k crosses barrier b if the distance
    ends non-positive, or, when ``uniforms`` is given, if the Brownian
    bridge between the two positive endpoints dips below zero, which
    happens with probability exp(-2 d_k d_{k+1} / (var_rate dt)).  The exit
    time is placed by linear interpolation on a sign change and at the
    step midpoint when only the bridge fires.
    """
    N, B, K1 = dist.shape
    K = K1 - 1
    if B == 0 or K == 0:
        return Exit(np.full(N, -1), np.full(N, np.inf), np.full(N, -1), np.zeros((N, B), bool))
    d0 = dist[..., :-1]
    d1 = dist[..., 1:]
    hit = (d1 <= 0) | (d0 <= 0)
    if uniforms is not None:
        with np.errstate(under="ignore"):
            p = np.exp(-2.0 * np.maximum(d0, 0.0) * np.maximum(d1, 0.0) / (var_rate * dt))
        hit |= uniforms < p
    if active is not None:
        hit &= active[:, :, None]
    if from_step is not None:
        hit &= np.arange(K)[None, None, :] >= from_step[:, None, None]
    anyb = hit.any(axis=1)
    step = np.argmax(anyb, axis=1)
    rows = np.arange(N)
    has = anyb[rows, step]
    step = np.where(has, step, -1)
    tau = np.full(N, np.inf)
    barrier = np.full(N, -1)
    fired = np.zeros((N, B), bool)
    if has.any():
        r = rows[has]
        e = step[has]
        f = hit[r, :, e]
        a = d0[r, :, e]
        b = d1[r, :, e]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(a <= 0, 0.0, np.where(b <= 0, a / (a - b), 0.5))
        tb = np.where(f, t0 + (e[:, None] + frac) * dt, np.inf)
        barrier[has] = np.argmin(tb, axis=1)
        tau[has] = tb.min(axis=1)
        fired[has] = f
    return Exit(step, tau, barrier, fired)
