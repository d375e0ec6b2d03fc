"""Drift fields and the Euler solution of d xi = d omega + aleph(xi) dt killed on exit."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .domains import first_exit

# per-unit cap on drift magnitudes near the boundary
DRIFT_CAP = 1e4


class DriftField:
    """A drift aleph: R^n -> R^n evaluated on arrays of shape (..., n).

    ``translation_invariant`` drifts depend on gaps only, which is what the
    gap-coordinate PDE solver needs.
    """

    def __init__(self, n: int, fn=None, key: str = "zero", translation_invariant: bool = True,
                 smooth: bool = True):
        self.n = n
        self._fn = fn
        self.key = key
        self.translation_invariant = translation_invariant
        self.smooth = smooth

    @property
    def is_zero(self) -> bool:
        return self._fn is None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._fn is None:
            return np.zeros_like(x)
        return self._fn(x)

    @property
    def digest(self) -> str:
        return hashlib.sha256(f"{self.n}:{self.key}".encode()).hexdigest()[:16]

    def __repr__(self):
        return f"DriftField(n={self.n}, key={self.key!r})"


def zero_drift(n: int) -> DriftField:
    return DriftField(n)


def constant_drift(c) -> DriftField:
    c = np.asarray(c, dtype=float).reshape(-1)
    key = "const:" + ",".join(repr(float(v)) for v in c)
    return DriftField(c.size, lambda x: np.broadcast_to(c, x.shape).copy(), key)


def cap_vectors(v: np.ndarray, cap: float = DRIFT_CAP):
    """Scale rows of v so that |v| <= cap; returns (capped, mask of capped rows)."""
    norm = np.sqrt(np.einsum("...i,...i->...", v, v))
    over = norm > cap
    if over.any():
        v = v.copy()
        v[over] *= (cap / norm[over])[..., None]
    return v, over


@dataclass
class XiBatch:
    xi: np.ndarray       # (N, n, M+1), frozen after the exit step
    tau: np.ndarray      # (N,), inf if alive at the horizon
    step: np.ndarray     # (N,), -1 if alive
    capped: int = 0


def solve_xi_batch(omega: np.ndarray, dt: float, drift: DriftField | None, domain,
                   uniforms: np.ndarray | None = None, bridge: bool = True) -> XiBatch:
    """Euler scheme for xi along each driving path, killed on leaving ``domain``.

    With zero drift xi is omega itself and the exit time coincides with the
    one produced by the coalescing-flow simulator on the same noise.
    """
    N, n, K = omega.shape
    M = K - 1
    us = uniforms if bridge else None
    if drift is None or drift.is_zero:
        ex = first_exit(domain.distances(np.moveaxis(omega, 1, 2)).transpose(0, 2, 1), dt, us,
                        domain.var_rate)
        return XiBatch(omega, ex.tau, ex.step)
    dW = np.diff(omega, axis=2)
    xi = np.empty_like(omega)
    xi[:, :, 0] = omega[:, :, 0]
    tau = np.full(N, np.inf)
    step = np.full(N, -1)
    alive = np.ones(N, bool)
    d_prev = domain.distances(xi[:, :, 0])
    dead0 = np.any(d_prev <= 0, axis=1)
    tau[dead0], step[dead0] = 0.0, 0
    alive &= ~dead0
    ncap = 0
    for j in range(M):
        x = xi[:, :, j]
        a, over = cap_vectors(drift(x[alive]))
        ncap += int(over.sum())
        nxt = x.copy()
        nxt[alive] = x[alive] + dW[alive, :, j] + a * dt
        xi[:, :, j + 1] = nxt
        if not alive.any():
            continue
        d1 = domain.distances(nxt)
        hit = d1 <= 0
        if us is not None:
            with np.errstate(under="ignore"):
                p = np.exp(-2.0 * np.maximum(d_prev, 0) * np.maximum(d1, 0) / (domain.var_rate * dt))
            hit |= us[:, :, j] < p
        hit &= alive[:, None]
        done = hit.any(axis=1)
        if done.any():
            a0, b0 = d_prev[done], d1[done]
            with np.errstate(divide="ignore", invalid="ignore"):
                fr = np.where(b0 <= 0, a0 / (a0 - b0), 0.5)
            tb = np.where(hit[done], (j + fr) * dt, np.inf)
            tau[done] = tb.min(axis=1)
            step[done] = j
            alive &= ~done
        d_prev = d1
    return XiBatch(xi, tau, step, ncap)
