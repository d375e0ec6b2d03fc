"""Survival probabilities alpha(t, u) = P(tau_G > t) and their log-gradients.

Backends
--------
closed-form
    erf formula for two particles and the half line; for more particles
    the Pfaffian of the matrix of pairwise erf terms (bordered by ones
    when n is odd).  Gradients are analytic for n <= 3 and use a complex
    step otherwise.
karlin-mcgregor
    quadrature of the non-collision determinant over the ordered region.
pde-grid
    Crank-Nicolson (Rannacher start) solution of the backward equation in
    gap coordinates, Dirichlet on the walls and Neumann far away.
mc-table
    bridge-corrected Monte Carlo with common random numbers across a table
    of starting gaps.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu
from scipy.special import erf, erfc

from .domains import HalfLine, WeylChamber
from .rng import TimeGrid, as_ledger, brownian_batch, make_grid
from .sde import DriftField, solve_xi_batch, zero_drift

ALPHA_FLOOR = 1e-12


class FloorError(ArithmeticError):
    """A log-gradient was requested where alpha is below the floor."""


class QuadratureError(ArithmeticError):
    def __init__(self, msg, estimate=None, error=None):
        super().__init__(msg)
        self.estimate = estimate
        self.error = error


# ---------------------------------------------------------------------------
# closed forms

def _pfaffian(A: np.ndarray) -> np.ndarray:
    """Pfaffian of a batch of even skew matrices by expansion along row 0."""
    m = A.shape[-1]
    if m == 0:
        return np.ones(A.shape[:-2], dtype=A.dtype)
    if m == 2:
        return A[..., 0, 1]
    out = np.zeros(A.shape[:-2], dtype=A.dtype)
    for j in range(1, m):
        keep = [k for k in range(m) if k not in (0, j)]
        sub = A[..., keep, :][..., :, keep]
        out = out + (-1) ** (j + 1) * A[..., 0, j] * _pfaffian(sub)
    return out


def _weyl_pfaffian(t, u):
    """alpha on S^n from the Pfaffian formula; works for complex inputs."""
    n = u.shape[-1]
    s = 2.0 * np.sqrt(t)[..., None, None]
    diff = (u[..., None, :] - u[..., :, None]) / s
    E = erf(diff)
    if n % 2:
        shape = E.shape[:-2] + (n + 1, n + 1)
        B = np.zeros(shape, dtype=E.dtype)
        B[..., :n, :n] = E
        B[..., :n, n] = 1.0
        B[..., n, :n] = -1.0
        E = B
    return _pfaffian(E)


def _weyl3(a, b):
    """erf(a) + erf(b) - erf(a+b) without cancellation (a, b scaled gaps)."""
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    small = erf(a) + erf(b) - erf(a + b)
    large = erf(lo) - erfc(hi) + erfc(lo + hi)
    return np.where(hi < 1.0, small, large)


def alpha_weyl(t, u) -> np.ndarray:
    """Survival of n independent Brownian motions in S^n (no collisions by t)."""
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    n = u.shape[-1]
    t_b, u_b = np.broadcast_arrays(t, u[..., 0])
    inside = np.all(np.diff(u, axis=-1) > 0, axis=-1) if n > 1 else np.ones(u.shape[:-1], bool)
    out = np.where(inside, 1.0, 0.0) * np.ones(t_b.shape)
    pos = t_b > 0
    if n == 1 or not pos.any():
        return out
    tt = np.where(pos, t_b, 1.0)
    if n == 2:
        val = erf((u[..., 1] - u[..., 0]) / (2 * np.sqrt(tt)))
    elif n == 3:
        s = 2 * np.sqrt(tt)
        val = _weyl3((u[..., 1] - u[..., 0]) / s, (u[..., 2] - u[..., 1]) / s)
    else:
        val = np.real(_weyl_pfaffian(tt, np.broadcast_to(u, tt.shape + (n,))))
    return np.where(pos, np.where(inside, np.clip(val, 0.0, 1.0), 0.0), out)


def alpha_halfline(t, x, boundary: float = 0.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)[..., 0] - boundary
    t = np.asarray(t, dtype=float)
    tt = np.where(t > 0, t, 1.0)
    val = np.where(x > 0, erf(np.maximum(x, 0) / np.sqrt(2 * tt)), 0.0)
    return np.where(t > 0, val, (x > 0).astype(float))


def alpha_s2_closed(t: float, u) -> float:
    """alpha for two particles: erf((u2 - u1) / (2 sqrt t)), and 1 for t <= 0."""
    u = WeylChamber(2).check_start(u)
    return float(alpha_weyl(t, u))


def _grad_weyl(t, u):
    """(alpha, grad alpha) on S^n, arrays (...,) and (..., n)."""
    n = u.shape[-1]
    t = np.broadcast_to(np.asarray(t, dtype=float), u.shape[:-1])
    c = 1.0 / np.sqrt(np.pi * t)
    s = 2 * np.sqrt(t)
    if n == 2:
        z = (u[..., 1] - u[..., 0]) / s
        al = erf(z)
        g = c * np.exp(-z * z)
        return al, np.stack([-g, g], axis=-1)
    if n == 3:
        a = (u[..., 1] - u[..., 0]) / s
        b = (u[..., 2] - u[..., 1]) / s
        al = _weyl3(a, b)
        ea, eb = np.exp(-a * a), np.exp(-b * b)
        d_ac = -ea * np.expm1(-b * (2 * a + b))   # e^{-a^2} - e^{-(a+b)^2}
        d_bc = -eb * np.expm1(-a * (a + 2 * b))   # e^{-b^2} - e^{-(a+b)^2}
        with np.errstate(over="ignore"):        # e^{-a^2} - e^{-b^2}, the safe branch is kept
            d_ab = np.where(a <= b, -ea * np.expm1(np.minimum(a * a - b * b, 0.0)),
                            eb * np.expm1(np.minimum(b * b - a * a, 0.0)))
        return al, np.stack([-c * d_ac, c * d_ab, c * d_bc], axis=-1)
    # complex step, exact to rounding for the analytic Pfaffian
    h = 1e-30
    al = np.real(_weyl_pfaffian(t, u.astype(complex)))
    grads = []
    for k in range(n):
        v = u.astype(complex)
        v[..., k] += 1j * h
        grads.append(np.imag(_weyl_pfaffian(t.astype(complex), v)) / h)
    return al, np.stack(grads, axis=-1)


@lru_cache(maxsize=1)
def _phi_table(zmax: float = 6.0, h: float = 2.5e-4):
    """phi(z) = z exp(-z^2) / (sqrt(pi) erf(z)), smooth with phi(0) = 1/2."""
    z = np.arange(0.0, zmax + h, h)
    with np.errstate(invalid="ignore", divide="ignore"):
        ph = z * np.exp(-z * z) / (np.sqrt(np.pi) * erf(z))
    ph[0] = 0.5
    ph[-1] = 0.0
    return h, ph


def _grad_halfline(t, x, boundary=0.0):
    y = np.asarray(x, dtype=float)[..., 0] - boundary
    t = np.asarray(t, dtype=float)
    z = y / np.sqrt(2 * t)
    al = erf(z)
    g = np.sqrt(2.0 / (np.pi * t)) * np.exp(-z * z)
    return al, g[..., None]


# ---------------------------------------------------------------------------
# Karlin-McGregor determinant quadrature

def _ordered_probability(means, t, y, w):
    """P(Y_1 < ... < Y_n) for independent N(means[i], t) by nested cumulative trapezoid.

    y is a uniform grid, w the trapezoid weights on it.
    """
    sd = np.sqrt(t)
    H = np.ones_like(y)
    h = y[1] - y[0]
    for m in means[:0:-1]:
        dens = np.exp(-0.5 * ((y - m) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
        f = dens * H
        # integral from y to the right end
        seg = 0.5 * h * (f[1:] + f[:-1])
        H = np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))
    dens = np.exp(-0.5 * ((y - means[0]) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    return np.sum(w * dens * H)


def _km_trapezoid(u, t, per_sd, width):
    sd = np.sqrt(t)
    lo, hi = u.min() - width * sd, u.max() + width * sd
    K = int(np.ceil((hi - lo) / sd * per_sd)) + 1
    y = np.linspace(lo, hi, K)
    w = np.full(K, y[1] - y[0])
    w[0] = w[-1] = 0.5 * (y[1] - y[0])
    total = 0.0
    n = u.size
    for perm in itertools.permutations(range(n)):
        sign = np.linalg.det(np.eye(n)[list(perm)])
        total += sign * _ordered_probability(u[list(perm)], t, y, w)
    return total, K


@dataclass(frozen=True)
class Quadrature:
    per_sd: int = 24        # nodes per standard deviation on the coarsest level
    width: float = 9.0      # truncation in standard deviations
    tol: float = 1e-7
    budget: int = 2_000_000  # max nodes on the finest level


def alpha_karlin_mcgregor(t: float, u, quadrature: Quadrature | None = None) -> tuple[float, float]:
    """alpha(t, u) on S^n from the non-collision determinant, with an error estimate.

    The determinant is expanded over permutations; each term is the
    probability that independent Gaussians come out ordered, evaluated by
    nested cumulative trapezoid sums on three nested grids and Richardson
    extrapolation.  The error estimate is the gap between the last two
    extrapolants.
    """
    q = quadrature or Quadrature()
    u = WeylChamber(len(np.atleast_1d(u))).check_start(u)
    if u.size > 4:
        raise ValueError("determinant quadrature is limited to n <= 4")
    if t <= 0:
        return 1.0, 0.0
    T = []
    for k in range(3):
        per = q.per_sd * 2 ** k
        est_nodes = (u.max() - u.min() + 2 * q.width * np.sqrt(t)) / np.sqrt(t) * per
        if est_nodes > q.budget:
            if len(T) >= 2:
                break
            raise QuadratureError(f"quadrature budget exceeded ({est_nodes:.0f} nodes)",
                                  estimate=T[-1] if T else None)
        T.append(_km_trapezoid(u, t, per, q.width)[0])
    R = [T[i + 1] + (T[i + 1] - T[i]) / 3 for i in range(len(T) - 1)]
    value = R[-1]
    err = abs(R[-1] - R[-2]) if len(R) > 1 else abs(T[-1] - T[-2])
    err = max(err, 1e-15)
    if err > q.tol:
        raise QuadratureError(f"quadrature error {err:.2e} above tolerance", value, err)
    return float(value), float(err)


# ---------------------------------------------------------------------------
# field objects

class SurvivalField:
    """alpha_{aleph, G}(t, u) with log-gradient queries.

    Subclasses implement ``alpha`` and ``grad_alpha``; both accept arrays
    with t broadcasting against u[..., 0].
    """

    backend = "abstract"

    def __init__(self, domain, drift: DriftField | None = None, meta: dict | None = None):
        self.domain = domain
        self.drift = drift or zero_drift(domain.dim)
        self.meta = meta or {}

    def alpha(self, t, u) -> np.ndarray:
        raise NotImplementedError

    def grad_alpha(self, t, u):
        """(alpha, grad alpha)."""
        raise NotImplementedError

    def grad_log_alpha(self, t, u, floor: float = ALPHA_FLOOR) -> np.ndarray:
        al, g = self.grad_alpha(t, u)
        al = np.asarray(al)
        low = al < floor
        if np.any(low):
            where = np.unravel_index(np.argmax(low), low.shape)
            raise FloorError(f"alpha = {al[where]:.3g} below floor {floor:g} at index {where}")
        return g / al[..., None]

    @property
    def key(self) -> str:
        return f"{self.backend}:{self.domain.key}:{self.drift.digest}"


class ClosedFormField(SurvivalField):
    backend = "closed-form"

    def __init__(self, domain):
        super().__init__(domain)

    def alpha(self, t, u):
        if isinstance(self.domain, HalfLine):
            return alpha_halfline(t, u, self.domain.boundary)
        return alpha_weyl(t, u)

    def grad_alpha(self, t, u):
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("gradient requested at t <= 0")
        if isinstance(self.domain, HalfLine):
            return _grad_halfline(t, u, self.domain.boundary)
        return _grad_weyl(t, u)

    def grad_log_alpha(self, t, u, floor: float = ALPHA_FLOOR) -> np.ndarray:
        if isinstance(self.domain, HalfLine) or self.domain.n != 2:
            return super().grad_log_alpha(t, u, floor)
        # two particles: d/dg log erf(g / 2 sqrt t) = 2 phi(z) / g with z = g / 2 sqrt t
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("gradient requested at t <= 0")
        gap = u[..., 1] - u[..., 0]
        z = gap / (2 * np.sqrt(t))
        zmin = float(z.min()) if z.size else 1.0
        if erf(zmin) < floor:
            raise FloorError(f"alpha = {float(erf(zmin)):.3g} below floor {floor:g}")
        h, ph = _phi_table()
        x = np.minimum(z * (1.0 / h), ph.size - 2.0)
        k = x.astype(np.intp)
        x -= k
        r = ph[k]
        r += x * (ph[k + 1] - r)
        r *= 2.0 / gap
        out = np.empty(r.shape + (2,))
        out[..., 0] = -r
        out[..., 1] = r
        return out


class KarlinMcGregorField(SurvivalField):
    backend = "karlin-mcgregor"

    def __init__(self, domain, quadrature: Quadrature | None = None):
        super().__init__(domain)
        self.quadrature = quadrature or Quadrature()

    def alpha(self, t, u):
        u = np.asarray(u, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), u.shape[:-1])
        out = np.empty(t.shape)
        for idx in np.ndindex(t.shape):
            out[idx] = alpha_karlin_mcgregor(float(t[idx]), u[idx], self.quadrature)[0]
        return out

    def grad_alpha(self, t, u):
        return _fd_grad(self.alpha, t, u, 1e-4)


def _fd_grad(fn, t, u, h):
    u = np.asarray(u, dtype=float)
    al = fn(t, u)
    gs = []
    for k in range(u.shape[-1]):
        e = np.zeros(u.shape[-1])
        e[k] = h
        gs.append((fn(t, u + e) - fn(t, u - e)) / (2 * h))
    return al, np.stack(gs, axis=-1)


def _gaps(domain, u):
    u = np.asarray(u, dtype=float)
    return domain.distances(u)


class TableField(SurvivalField):
    """alpha tabulated on (time, gap_1, ..., gap_d) nodes, linear interpolation."""

    def __init__(self, domain, drift, times, axes, table, backend, stderr=None, meta=None):
        super().__init__(domain, drift, meta)
        self.backend = backend
        self.times = np.asarray(times, dtype=float)
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.table = np.asarray(table, dtype=float)
        self.stderr = None if stderr is None else np.asarray(stderr, dtype=float)
        self._interp = RegularGridInterpolator((self.times, *self.axes), self.table,
                                               bounds_error=False, fill_value=None)
        self.h = min(float(a[1] - a[0]) for a in self.axes)

    def _alpha_gaps(self, t, g):
        g = np.asarray(g, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), g.shape[:-1])
        if np.any(t > self.times[-1] * (1 + 1e-12)):
            raise ValueError(f"t beyond tabulated horizon {self.times[-1]}")
        pts = np.concatenate([np.clip(t, 0, self.times[-1])[..., None],
                              np.clip(g, 0, [a[-1] for a in self.axes])], axis=-1)
        val = self._interp(pts.reshape(-1, pts.shape[-1])).reshape(t.shape)
        val = np.where(np.any(g <= 0, axis=-1), 0.0, val)
        return np.clip(val, 0.0, 1.0)

    def alpha(self, t, u):
        return self._alpha_gaps(t, _gaps(self.domain, u))

    def grad_alpha(self, t, u):
        u = np.asarray(u, dtype=float)
        g = _gaps(self.domain, u)
        al = self._alpha_gaps(t, g)
        d = g.shape[-1]
        dg = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = 0.5 * self.h
            dg.append((self._alpha_gaps(t, g + e) - self._alpha_gaps(t, np.maximum(g - e, 0))) /
                      (np.minimum(g[..., i], 0.5 * self.h) + 0.5 * self.h))
        dg = np.stack(dg, axis=-1)
        if isinstance(self.domain, HalfLine):
            return al, dg
        n = d + 1
        grad = np.zeros(u.shape)
        for k in range(n):
            if k >= 1:
                grad[..., k] += dg[..., k - 1]
            if k < d:
                grad[..., k] -= dg[..., k]
        return al, grad

    # cache format: one JSON header line, then float64 little-endian payload
    def save(self, path) -> None:
        header = {
            "backend": self.backend, "domain": self.domain.key, "drift": self.drift.key,
            "times": [len(self.times), float(self.times[0]), float(self.times[-1])],
            "axes": [[len(a), float(a[0]), float(a[-1])] for a in self.axes],
            "stderr": self.stderr is not None, "meta": self.meta,
        }
        with open(path, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
            fh.write(np.ascontiguousarray(self.table, dtype="<f8").tobytes())
            if self.stderr is not None:
                fh.write(np.ascontiguousarray(self.stderr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, domain, drift=None) -> "TableField":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            times = np.linspace(header["times"][1], header["times"][2], header["times"][0])
            axes = [np.linspace(a[1], a[2], a[0]) for a in header["axes"]]
            shape = (len(times), *[len(a) for a in axes])
            size = int(np.prod(shape))
            table = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            se = None
            if header["stderr"]:
                se = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
        if header["domain"] != domain.key:
            raise ValueError(f"cached field is for {header['domain']}, not {domain.key}")
        return cls(domain, drift, times, axes, table, header["backend"], se, header["meta"])


def cache_dir() -> Path:
    d = os.environ.get("ARRATIA_CHAOS_CACHE") or os.path.join(os.path.expanduser("~"), ".cache", "arratia_chaos")
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cache_key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:24]


# ---------------------------------------------------------------------------
# PDE backend

@dataclass(frozen=True)
class PDEMesh:
    h: float = 0.05          # gap spacing
    L: float = 6.0           # far-field gap where the Neumann condition is imposed
    dt: float = 0.01
    T: float = 1.0
    scheme: str = "crank-nicolson"   # or "explicit"


def _diffusion(domain):
    if isinstance(domain, HalfLine):
        return np.array([[0.5]])
    d = domain.n - 1
    D = np.eye(d)
    for i in range(d - 1):
        D[i, i + 1] = D[i + 1, i] = -0.5
    return D


def _gap_drift(domain, drift, G):
    """Drift of the gap coordinates at node gaps G (..., d)."""
    if drift is None or drift.is_zero:
        return np.zeros(G.shape)
    if not drift.translation_invariant:
        raise ValueError("the gap PDE needs a translation-invariant drift")
    if isinstance(domain, HalfLine):
        return drift(G + domain.boundary)
    x = np.concatenate([np.zeros(G.shape[:-1] + (1,)), np.cumsum(G, axis=-1)], axis=-1)
    a = drift(x)
    return np.diff(a, axis=-1)


def generator_matrix(domain, drift, h: float, K: int):
    """Sparse discrete generator on the unknowns g = (k_1 h, ..., k_d h), 1 <= k_i <= K.

    Central differences, zero values on the walls g_i = 0 and mirror
    ghosts at k_i = K + 1.
    """
    D = _diffusion(domain)
    d = D.shape[0]
    shape = (K,) * d
    idx = np.indices(shape).reshape(d, -1).T + 1          # 1-based node indices
    G = idx * h
    b = _gap_drift(domain, drift, G)
    rows, cols, vals = [], [], []

    def add(offset, coef):
        tgt = idx + np.asarray(offset)
        ok = np.all(tgt >= 1, axis=1)
        tgt = np.where(tgt == K + 1, K - 1, tgt)
        flat = np.ravel_multi_index(tuple((tgt[ok] - 1).T), shape)
        rows.append(np.flatnonzero(ok))
        cols.append(flat)
        vals.append(np.broadcast_to(coef, ok.shape)[ok])

    for i in range(d):
        e = np.zeros(d, int)
        e[i] = 1
        add(e, D[i, i] / h ** 2 + b[:, i] / (2 * h))
        add(-e, D[i, i] / h ** 2 - b[:, i] / (2 * h))
        add(0 * e, -2 * D[i, i] / h ** 2)
        for j in range(i + 1, d):
            if D[i, j] == 0:
                continue
            f = np.zeros(d, int)
            f[j] = 1
            c = 2 * D[i, j] / (4 * h * h)
            add(e + f, c)
            add(-e - f, c)
            add(e - f, -c)
            add(-e + f, -c)
    n = K ** d
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return A, G, b


def alpha_pde(drift: DriftField | None, domain, mesh: PDEMesh = PDEMesh()) -> TableField:
    """Solve d_t alpha = L alpha on the gap box (0, L]^d up to mesh.T."""
    if isinstance(domain, WeylChamber) and domain.n not in (2, 3):
        raise ValueError("the gap PDE is implemented for two and three particles")
    h, dt = mesh.h, mesh.dt
    K = int(round(mesh.L / h))
    if K < 3 or dt <= 0 or mesh.T <= 0:
        raise ValueError("mesh too coarse")
    A, G, b = generator_matrix(domain, drift, h, K)
    D = _diffusion(domain)
    d = D.shape[0]
    nsteps = int(round(mesh.T / dt))
    f = np.ones(A.shape[0])
    snaps = [f.copy()]
    I = sparse.identity(A.shape[0], format="csc")
    if mesh.scheme == "explicit":
        rate = (2 * np.trace(D) + 2 * np.sum(np.abs(np.triu(D, 1)))) / h ** 2 + np.abs(b).sum(axis=1).max() / h
        if dt * rate > 1:
            raise ValueError(f"explicit scheme unstable: dt*rate = {dt * rate:.3f} > 1")
        for _ in range(nsteps):
            f = f + dt * (A @ f)
            if not np.all(np.isfinite(f)):
                raise FloatingPointError("non-finite values in PDE solve")
            snaps.append(f.copy())
    elif mesh.scheme == "crank-nicolson":
        # the implicit half step of backward Euler and of Crank-Nicolson share a matrix
        lu = splu((I - 0.5 * dt * A).tocsc())
        rhs = (I + 0.5 * dt * A).tocsr()
        for k in range(nsteps):
            if k < 2:
                # Rannacher start: two backward Euler half steps
                f = lu.solve(lu.solve(f))
            else:
                f = lu.solve(rhs @ f)
            if not np.all(np.isfinite(f)):
                raise FloatingPointError("non-finite values in PDE solve")
            snaps.append(f.copy())
    else:
        raise ValueError(f"unknown scheme {mesh.scheme}")
    shape = (K,) * d
    full = np.zeros((len(snaps),) + (K + 1,) * d)
    inner = tuple(slice(1, None) for _ in range(d))
    for k, s in enumerate(snaps):
        full[(k,) + inner] = np.clip(s, 0.0, 1.0).reshape(shape)
    axes = [np.arange(K + 1) * h] * d
    times = np.arange(len(snaps)) * dt
    meta = {"mesh": asdict(mesh)}
    return TableField(domain, drift, times, axes, full, "pde-grid", None, meta)


def operator_residual(domain, h: float, t: float, L: float = 6.0, margin: float = 1.0) -> float:
    """max |d_t alpha - L_h alpha| of the closed form on interior nodes with gaps <= L - margin."""
    K = int(round(L / h))
    A, G, _ = generator_matrix(domain, None, h, K)
    field = ClosedFormField(domain)
    if isinstance(domain, HalfLine):
        U = G + domain.boundary
    else:
        U = np.concatenate([np.zeros((G.shape[0], 1)), np.cumsum(G, axis=1)], axis=1)
    f = field.alpha(t, U)
    # complex-step time derivative of the closed form
    eps = 1e-30
    if isinstance(domain, HalfLine):
        z = (U[:, 0] - domain.boundary) / np.sqrt(2 * (t + 1j * eps))
        ft = np.imag(erf(z)) / eps
    else:
        ft = np.imag(_weyl_pfaffian(np.full(U.shape[0], t + 1j * eps), U.astype(complex))) / eps
    res = A @ f - ft
    keep = np.all(G <= L - margin, axis=1)
    return float(np.max(np.abs(res[keep])))


# ---------------------------------------------------------------------------
# Monte Carlo backends

def alpha_monte_carlo(drift: DriftField | None, u, t: float, N: int, seed, domain=None,
                      M: int = 1024, bridge: bool = True) -> tuple[float, float]:
    """Fraction of bridge-corrected Euler paths alive at t, with binomial stderr."""
    u = np.asarray(u, dtype=float).reshape(-1)
    domain = domain or WeylChamber(u.size)
    u = domain.check_start(u)
    if N < 1:
        raise ValueError("N must be positive")
    if t <= 0:
        return 1.0, 0.0
    grid = make_grid(t, M)
    alive = 0
    ledger = as_ledger(seed)
    step = 8192
    for k, lo in enumerate(range(0, N, step)):
        size = min(step, N - lo)
        pb = brownian_batch(u, grid, size, ledger.child(k))
        xb = solve_xi_batch(pb.values, grid.dt, drift, domain, pb.uniforms, bridge)
        alive += int(np.sum(~np.isfinite(xb.tau)))
    p = alive / N
    return p, float(np.sqrt(max(p * (1 - p), 1.0 / N) / N))


def alpha_mc_table(drift: DriftField | None, domain, gaps, grid: TimeGrid, N: int, seed) -> TableField:
    """Survival table for one gap coordinate (two particles or half line) with CRN across gaps."""
    gaps = np.asarray(gaps, dtype=float)
    if isinstance(domain, WeylChamber) and domain.n != 2:
        raise ValueError("mc-table backend covers a single gap coordinate")
    n = domain.dim
    ledger = as_ledger(seed)
    pb = brownian_batch(np.zeros(n), grid, N, ledger)
    incs = pb.values
    table = np.zeros((grid.steps + 1, gaps.size + 1))
    se = np.zeros_like(table)
    table[0, 1:] = 1.0
    for k, g in enumerate(gaps):
        start = np.array([g + getattr(domain, "boundary", 0.0)]) if n == 1 else np.array([0.0, g])
        xb = solve_xi_batch(incs + start[None, :, None], grid.dt, drift, domain, pb.uniforms)
        alive = xb.tau[:, None] > grid.times[None, :]
        table[:, k + 1] = alive.mean(axis=0)
        se[:, k + 1] = alive.std(axis=0) / np.sqrt(N)
    axes = [np.concatenate(([0.0], gaps))]
    return TableField(domain, drift, grid.times, axes, table, "mc-table", se, {"N": N})


def grad_log_alpha(field: SurvivalField, t, u) -> np.ndarray:
    return field.grad_log_alpha(t, u)
