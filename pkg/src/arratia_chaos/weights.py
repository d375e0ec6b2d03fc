"""Weights rho, the harmonic functions beta and the drifts aleph = grad log beta.

For the three-particle chamber beta_t(x) is the bounded harmonic function
on S^3 equal to erf(surviving gap / (2 sqrt t)) on the walls.  In the plane
orthogonal to (1, 1, 1) the chamber is a 60 degree wedge; cubing maps it to
the upper half plane, where the Poisson integral gives beta by one
dimensional quadrature.  The ``wedge`` backend tabulates log beta in polar
coordinates and differentiates a bicubic spline.

Monte Carlo weights come from hierarchical samples of the chain of exits:
level n exits S^n at tau_n leaving n-1 particles, which exit S^{n-1} at
tau_{n-1}, and so on down to the last two-particle gap G.  Then

    rho_{t_2..t_n}(u) = E[ prod_{m>=3} 1{tau_m > t_m} * erf(G / (2 sqrt t_2)) ].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.special import erf, erfc

from .domains import WeylChamber
from .flow import _level_chunk
from .rng import TimeGrid, as_ledger, iter_chunks, make_grid
from .sde import DriftField

SQ2, SQ6 = np.sqrt(2.0), np.sqrt(6.0)
log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# three particles: beta by the Poisson integral on the cubed wedge

def _edge(s):
    """Boundary value and its complement at real point s of the half plane."""
    z = SQ6 * np.cbrt(np.abs(s)) / 4.0
    return erf(z), erfc(z)


@lru_cache(maxsize=4)
def _tanh_sinh(h=1.0 / 16, tmax=4.0):
    """Nodes v in (0, 1) and weights for integrals over (0, 1), clustered at both ends."""
    t = np.arange(-tmax, tmax + h / 2, h)
    u = 0.5 * np.pi * np.sinh(t)
    x = np.tanh(u)
    w = h * 0.5 * np.pi * np.cosh(t) / np.cosh(u) ** 2
    return 0.5 * (x + 1), 0.5 * w


def beta3_unit(r, phi, h: float = 1.0 / 16):
    """beta_1 at polar coordinates (r, phi), phi in [0, pi/3] measured from the g2 = 0 wall.

    theta parametrises the real line by s = X + Y tan(theta); the integral
    is split where s = 0 and both pieces use tanh-sinh nodes.  Whichever of
    beta and 1 - beta is smaller is integrated directly.
    """
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    r, phi = np.broadcast_arrays(r, phi)
    X = (r ** 3 * np.cos(3 * phi))[..., None]
    Y = np.maximum(r ** 3 * np.sin(3 * phi), 1e-300)[..., None]
    th0 = np.arctan(-X / Y)
    v, wv = _tanh_sinh(h)
    I_f = 0.0
    I_F = 0.0
    for lo, hi in ((-np.pi / 2, th0), (th0, np.pi / 2)):
        th = lo + (hi - lo) * v
        f, F = _edge(X + Y * np.tan(th))
        I_f = I_f + np.sum(wv * (hi - lo) * f, axis=-1)
        I_F = I_F + np.sum(wv * (hi - lo) * F, axis=-1)
    I_f, I_F = I_f / np.pi, I_F / np.pi
    val = np.where(I_f < 0.5, I_f, 1.0 - I_F)
    on_wall = (phi <= 0) | (phi >= np.pi / 3)
    return np.where(on_wall, erf(SQ6 * r / 4.0), val)


def _polar(h1, h2):
    a = h1 / SQ2
    b = (h1 + 2 * h2) / SQ6
    return a, b, np.hypot(a, b), np.arctan2(b, a) - np.pi / 6


class WedgeBeta:
    """Spline of log beta_1 on (log r, phi) with harmonic extrapolation at both ends."""

    def __init__(self, r_min=1e-3, r_max=60.0, n_r=240, n_phi=73, table=None):
        self.lr = np.linspace(np.log(r_min), np.log(r_max), n_r)
        # walls included; log beta is finite there away from the corner
        self.ph = np.linspace(0.0, np.pi / 3, n_phi)
        if table is None:
            R, P = np.meshgrid(np.exp(self.lr), self.ph, indexing="ij")
            table = np.log(beta3_unit(R, P))
        self.table = np.asarray(table, float)
        if self.table.shape != (n_r, n_phi):
            raise ValueError("wedge table has the wrong shape")
        self.spline = RectBivariateSpline(self.lr, self.ph, self.table, kx=3, ky=3)
        self.r_min, self.r_max = r_min, r_max
        self._dense = None

    def _dense_tables(self, n_r=2049, n_phi=513):
        # derivative tables on a fine regular grid for bilinear lookups
        if self._dense is None:
            lr = np.linspace(self.lr[0], self.lr[-1], n_r)
            ph = np.linspace(0.0, np.pi / 3, n_phi)
            L, P = np.meshgrid(lr, ph, indexing="ij")
            tab = np.stack([self.spline.ev(L, P, dx=1), self.spline.ev(L, P, dy=1)], axis=-1)
            self._dense = (lr[0], lr[1] - lr[0], ph[1] - ph[0], tab)
        return self._dense

    def log_beta(self, h1, h2):
        _, _, r, phi = _polar(np.asarray(h1, float), np.asarray(h2, float))
        phi = np.clip(phi, 0, np.pi / 3)
        lr = np.log(np.maximum(r, 1e-300))
        lo, hi = self.lr[0], self.lr[-1]
        core = self.spline.ev(np.clip(lr, lo, hi), phi)
        out = np.where(lr < lo, core + (lr - lo), core)
        # log beta ~ -A(phi) r^{-3} far out
        return np.where(lr > hi, core * np.exp(-3 * (lr - hi)), out)

    def grad_log_beta(self, h1, h2, fast: bool = False):
        """Gradient of log beta_1 with respect to (h1, h2).

        ``fast`` replaces the spline derivatives by bilinear lookups in
        dense derivative tables (relative error about 1e-5).
        """
        h1 = np.asarray(h1, float)
        h2 = np.asarray(h2, float)
        a, b, r, phi = _polar(h1, h2)
        phi = np.clip(phi, 0, np.pi / 3)
        r = np.maximum(r, 1e-300)
        lr = np.log(r)
        lo, hi = self.lr[0], self.lr[-1]
        lc = np.clip(lr, lo, hi)
        if fast:
            l0, dl, dp, tab = self._dense_tables()
            x = (lc - l0) / dl
            y = phi / dp
            i = np.minimum(x.astype(np.intp), tab.shape[0] - 2)
            k = np.minimum(y.astype(np.intp), tab.shape[1] - 2)
            fx = (x - i)[..., None]
            fy = (y - k)[..., None]
            v = ((tab[i, k] * (1 - fx) + tab[i + 1, k] * fx) * (1 - fy)
                 + (tab[i, k + 1] * (1 - fx) + tab[i + 1, k + 1] * fx) * fy)
            d_lr, d_ph = v[..., 0], v[..., 1]
        else:
            d_lr = self.spline.ev(lc, phi, dx=1)
            d_ph = self.spline.ev(lc, phi, dy=1)
        d_lr = np.where(lr < lo, 1.0, d_lr)
        far = lr > hi
        if np.any(far):
            core = self.spline.ev(lc, phi)
            decay = np.exp(-3 * (lr - hi))
            d_lr = np.where(far, -3 * core * decay, d_lr)
            d_ph = np.where(far, d_ph * decay, d_ph)
        ga = (d_lr * a - d_ph * b) / r ** 2
        gb = (d_lr * b + d_ph * a) / r ** 2
        # (a, b) -> (h1, h2): a = h1/sqrt2, b = (h1 + 2 h2)/sqrt6
        return ga / SQ2 + gb / SQ6, 2 * gb / SQ6


_WEDGE: WedgeBeta | None = None


WEDGE_VERSION = 1


def wedge() -> WedgeBeta:
    """The shared wedge table, loaded from the cache directory or built (with a warning) and saved."""
    global _WEDGE
    if _WEDGE is None:
        from .survival import cache_dir, cache_key
        path = None
        try:
            path = cache_dir() / f"wedge-{cache_key('wedge', WEDGE_VERSION, 1e-3, 60.0, 240, 73)}.npy"
        except OSError:
            pass
        if path is not None and path.exists():
            _WEDGE = WedgeBeta(table=np.load(path))
        else:
            log.warning("wedge table not in cache; building it (a few seconds)")
            _WEDGE = WedgeBeta()
            if path is not None:
                try:
                    np.save(path, _WEDGE.table)
                except OSError as e:
                    log.warning("could not write wedge cache %s: %s", path, e)
    return _WEDGE


def beta3(theta: float, x) -> np.ndarray:
    """beta_theta(x) for three particles (theta = 0 gives 1)."""
    x = np.asarray(x, float)
    if theta <= 0:
        return np.ones(x.shape[:-1])
    g = np.diff(x, axis=-1) / np.sqrt(theta)
    return np.exp(wedge().log_beta(g[..., 0], g[..., 1]))


def aleph3(theta, x, fast: bool = False) -> np.ndarray:
    """grad log beta_theta at x in S^3; theta broadcasts against x[..., 0]."""
    x = np.asarray(x, float)
    theta = np.asarray(theta, float)
    st = np.sqrt(np.where(theta > 0, theta, 1.0))
    g = np.maximum(np.diff(x, axis=-1), 1e-300) / st[..., None]
    d1, d2 = wedge().grad_log_beta(g[..., 0], g[..., 1], fast)
    out = np.stack([-d1, d1 - d2, d2], axis=-1) / st[..., None]
    return np.where((theta > 0)[..., None], out, 0.0)


def aleph_field(theta: tuple, n: int, fast: bool = True) -> DriftField:
    """DriftField for aleph_theta on S^n."""
    theta = tuple(float(t) for t in theta)
    if len(theta) != n - 2:
        raise ValueError(f"aleph on S^{n} needs {n - 2} times, got {len(theta)}")
    if all(t == 0 for t in theta):
        return DriftField(n)
    if n != 3:
        raise NotImplementedError("aleph is available for the three-particle chamber only")
    th = theta[0]
    return DriftField(3, lambda x: aleph3(th, x, fast), f"aleph3:{th!r}")


# ---------------------------------------------------------------------------
# Monte Carlo exits and RhoWeights

@dataclass
class ExitSamples:
    u: np.ndarray
    tau: dict          # m -> (N,) exit time of level m, m = 3..n
    gap: np.ndarray    # (N,) gap of the two-particle level start
    capped: np.ndarray


def simulate_exit_chain(u, grid: TimeGrid, N: int, seed) -> ExitSamples:
    u = WeylChamber(len(np.atleast_1d(u))).check_start(u)
    ledger = as_ledger(seed)
    n = u.size
    taus = {m: np.empty(N) for m in range(3, n + 1)}
    gap = np.empty(N)
    capped = np.zeros(N, bool)
    for c, lo, size in iter_chunks(N):
        start = np.tile(u, (size, 1))
        for m in range(n, 2, -1):
            lv = _level_chunk(start, grid, ledger.child(m), c, keep_paths=False)
            taus[m][lo:lo + size] = lv.tau
            capped[lo:lo + size] |= lv.capped
            start = lv.exit_pos
        gap[lo:lo + size] = start[:, 1] - start[:, 0]
    return ExitSamples(u, taus, gap, capped)


def _erf_weight(gap, t2):
    if t2 <= 0:
        return np.ones_like(gap)
    return erf(np.maximum(gap, 0) / (2 * np.sqrt(t2)))


class RhoWeights:
    """rho_{t_2..t_n}(u), beta and aleph for the start u.

    ``samples`` holds the Monte Carlo exit chain (None for n = 2, where
    rho is the closed-form erf).  ``times`` is the default evaluation point.
    """

    def __init__(self, u, samples: ExitSamples | None, times=None, ledger=None):
        self.u = np.asarray(u, float)
        self.n = self.u.size
        self.samples = samples
        self.times = tuple(times) if times is not None else None
        self.ledger = ledger

    def per_sample(self, times) -> np.ndarray:
        """Per-sample integrand whose mean is rho_times(u); times = (t_2..t_k), k <= n."""
        times = tuple(float(t) for t in times)
        if self.n == 2 or self.samples is None:
            return np.atleast_1d(_erf_weight(np.array(self.u[1] - self.u[0]), times[0] if times else 0.0))
        if len(times) > self.n - 1:
            raise ValueError("too many times")
        t2 = times[0] if times else 0.0
        val = _erf_weight(self.samples.gap, t2)
        for m, tm in enumerate(times[1:], start=3):
            val = val * (self.samples.tau[m] > tm)
        return val

    def rho(self, times=None) -> tuple[float, float]:
        times = self.times if times is None else times
        if len(times) != self.n - 1:
            raise ValueError(f"rho on S^{self.n} takes {self.n - 1} times")
        v = self.per_sample(times)
        se = 0.0 if v.size == 1 else float(v.std() / np.sqrt(v.size))
        return float(v.mean()), se

    def beta(self, times=None, x=None) -> tuple[float, float]:
        """beta_{t_2..t_{n-1}} at u (Monte Carlo) or at x (wedge, n = 3)."""
        times = tuple(self.times[:-1]) if times is None else tuple(times)
        if x is not None:
            if self.n != 3:
                raise NotImplementedError("beta at arbitrary points needs the three-particle chamber")
            return float(beta3(times[0], x)), 0.0
        if self.n == 2:
            return 1.0, 0.0
        # beta(u) = E[rho_{t_2..t_{n-1}}(p^{n-1})], the level-n exit is not weighted
        t2 = times[0]
        val = _erf_weight(self.samples.gap, t2)
        for m, tm in enumerate(times[1:], start=3):
            val = val * (self.samples.tau[m] > tm)
        return float(val.mean()), float(val.std() / np.sqrt(val.size))

    def aleph(self, theta, x) -> np.ndarray:
        return aleph_field(tuple(theta), np.asarray(x).shape[-1])(x)

    def drift(self, theta) -> DriftField:
        return aleph_field(tuple(theta), self.n)


def rho_beta_recursion(times, u, N: int, seed, grid: TimeGrid | None = None) -> RhoWeights:
    """Monte Carlo weights for start u; ``times`` = (t_2, ..., t_{n-1}) or (t_2, ..., t_n)."""
    u = WeylChamber(len(np.atleast_1d(u))).check_start(u)
    ledger = as_ledger(seed)
    if u.size == 2:
        return RhoWeights(u, None, times, ledger)
    if grid is None:
        T = max([float(t) for t in times] + [1.0])
        grid = make_grid(T, 256)
    samples = simulate_exit_chain(u, grid, N, ledger)
    return RhoWeights(u, samples, times, ledger)


def beta_mc_table(theta2: float, x0, offsets, grid: TimeGrid, N: int, seed):
    """beta_{theta2}(x0 + offset) for three particles by Monte Carlo with common noise.

    Returns (means, per-sample matrix) so that stencil combinations can be
    given honest standard errors.
    """
    x0 = np.asarray(x0, float)
    offsets = np.asarray(offsets, float)
    cols = []
    for off in offsets:
        s = simulate_exit_chain(x0 + off, grid, N, seed)
        cols.append(_erf_weight(s.gap, theta2))
    V = np.stack(cols, axis=1)
    return V.mean(axis=0), V
