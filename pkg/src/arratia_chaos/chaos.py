"""Iterated stochastic integrals on grids.

``ito_iterated``
    plain multiple Ito integrals of a Brownian path.
``flow_iterated_naive``
    the same sums against the coalescing coordinates; these are not
    orthogonal and serve as the negative control.
``j_integral``
    stopped integrals J: the outer integral runs up to the exit time and
    the inner (d-1)-fold integral at outer time t is taken along the
    conditioned path phi(t, .).
``a_operator``
    the recursive integrals over the chain of post-collision motions.

All sums are left-point.  A step containing the exit time is included,
so the stopped sums are martingales for the discrete stopping time at the
end of that step.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from .domains import WeylChamber
from .flow import CoalescingMotion, LevelBatch, levels_from_motion
from .girsanov import solve_xi
from .kernels import ProductKernel, SimplexKernel, last_time_density, simplex_inner
from .rng import SamplePath
from .sde import DRIFT_CAP, cap_vectors
from .survival import ClosedFormField
from .weights import aleph3


# ---------------------------------------------------------------------------
# indices

@dataclass(frozen=True)
class ChaosIndex:
    """A word k = (k_1, ..., k_d) over the alphabet {1, ..., n} (1-based)."""

    n: int
    seq: tuple = ()

    def __post_init__(self):
        seq = tuple(int(k) for k in self.seq)
        if self.n < 1:
            raise ValueError("alphabet size must be >= 1")
        bad = [k for k in seq if not 1 <= k <= self.n]
        if bad:
            raise ValueError(f"index entries {bad} outside 1..{self.n}")
        object.__setattr__(self, "seq", seq)

    @property
    def d(self) -> int:
        return len(self.seq)

    @property
    def coords(self) -> tuple:
        return tuple(k - 1 for k in self.seq)

    @classmethod
    def parse(cls, n: int, text: str) -> "ChaosIndex":
        text = text.strip().strip("()")
        return cls(n, tuple(int(x) for x in text.split(",") if x.strip()))

    def __str__(self):
        return "(" + ",".join(map(str, self.seq)) + ")"


@dataclass(frozen=True)
class MultiIndex:
    """(k^1, ..., k^n) with k^j a word over {1, ..., j}."""

    components: tuple

    def __post_init__(self):
        comps = []
        for j, c in enumerate(self.components, start=1):
            c = c if isinstance(c, ChaosIndex) else ChaosIndex(j, tuple(c))
            if c.n != j:
                raise ValueError(f"component {j} must use the alphabet 1..{j}, got n={c.n}")
            comps.append(c)
        object.__setattr__(self, "components", tuple(comps))

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def degree(self) -> int:
        return sum(c.d for c in self.components)

    @property
    def arities(self) -> tuple:
        return tuple(c.d for c in self.components)

    @classmethod
    def parse(cls, text: str) -> "MultiIndex":
        """Components separated by ``|``, level 1 first, e.g. ``|1`` or ``1|2,1``."""
        parts = text.split("|")
        return cls(tuple(ChaosIndex.parse(j, p) for j, p in enumerate(parts, start=1)))

    def __str__(self):
        return "|".join(str(c) for c in self.components)


def _check(kernel: SimplexKernel, index: ChaosIndex, dim: int):
    if kernel.arity != index.d:
        raise ValueError(f"kernel arity {kernel.arity} does not match index length {index.d}")
    if index.d and max(index.coords) >= dim:
        raise ValueError(f"index {index} refers to coordinates beyond dimension {dim}")


# ---------------------------------------------------------------------------
# iterated sums, time-major arrays (J, P, n)

def _iterated(factors, coords, inc, times) -> np.ndarray:
    """sum over i_1 < ... < i_m of prod_r f_r(t_{i_r}) inc[i_r, :, k_r]."""
    P = inc.shape[1]
    if not factors:
        return np.ones(P)
    S = None
    m = len(factors)
    for r, (f, k) in enumerate(zip(factors, coords)):
        x = f(times)[:, None] * inc[:, :, k]
        if S is not None:
            x = x * S
        if r == m - 1:
            return x.sum(axis=0)
        S = np.zeros_like(x)
        np.cumsum(x[:-1], axis=0, out=S[1:])
    return S


def _kernel_sum(kernel: SimplexKernel, coords, inc, times) -> np.ndarray:
    if kernel.arity == 0:
        return np.full(inc.shape[1], kernel.constant)
    out = 0.0
    for c, fs in kernel.terms():
        out = out + c * _iterated(fs, coords, inc, times)
    return out


def ito_iterated_batch(values: np.ndarray, dt: float, kernel: SimplexKernel, index: ChaosIndex,
                       stop: np.ndarray | None = None) -> np.ndarray:
    """I_k a for each path in values (N, n, M+1); steps j >= stop[p] are dropped."""
    _check(kernel, index, values.shape[1])
    inc = np.moveaxis(np.diff(values, axis=2), 2, 0)
    M = inc.shape[0]
    if stop is not None:
        keep = np.arange(M)[:, None] < np.asarray(stop)[None, :]
        inc = inc * keep[:, :, None]
    return _kernel_sum(kernel, index.coords, inc, np.arange(M) * dt)


def ito_iterated(path: SamplePath, kernel: SimplexKernel, index: ChaosIndex) -> float:
    """Multiple Ito integral of ``kernel`` along ``path`` (left-point sums)."""
    if kernel.horizon > path.grid.horizon + 1e-12:
        raise ValueError("kernel support extends beyond the grid horizon")
    return float(ito_iterated_batch(path.values[None], path.grid.dt, kernel, index)[0])


def flow_iterated_naive(motion: CoalescingMotion, kernel: SimplexKernel, index: ChaosIndex) -> float:
    """The same sums driven by the coalescing coordinates x(u_i, .)."""
    return ito_iterated(motion.path, kernel, index)


# ---------------------------------------------------------------------------
# stopped integrals

@dataclass
class IntegralStats:
    capped: int = 0
    evaluated: int = 0
    notes: list = dfield(default_factory=list)

    def add(self, other: "IntegralStats"):
        self.capped += other.capped
        self.evaluated += other.evaluated
        self.notes.extend(other.notes)

    @property
    def capped_fraction(self) -> float:
        return self.capped / self.evaluated if self.evaluated else 0.0


def stopped_integrals(xi: np.ndarray, inc: np.ndarray, step: np.ndarray, dt: float, specs,
                      field=None, weight: np.ndarray | None = None, cap: float = DRIFT_CAP):
    """Stopped integrals for several (kernel, ChaosIndex) specs on shared paths.

    xi (N, n, M+1) are the positions where grad log alpha is evaluated, inc
    (N, n, M) the driving increments and step (N,) the exit step (-1 if
    none).  For outer time t_j the inner increments are inc minus
    grad log alpha(t_j - t_i, xi_i) dt.  ``weight`` (N, M), if given,
    multiplies every outer term.  Returns ((N, S) values, IntegralStats).
    """
    N, n, K = xi.shape
    M = K - 1
    times = np.arange(M) * dt
    alive = (step[:, None] < 0) | (np.arange(M)[None, :] <= step[:, None])
    W = alive.astype(float) if weight is None else alive * weight
    out = np.zeros((N, len(specs)))
    st = IntegralStats()
    deep = []
    for s, (kern, idx) in enumerate(specs):
        _check(kern, idx, n)
        if idx.d == 0:
            out[:, s] = kern.constant
        elif idx.d == 1:
            k = idx.coords[0]
            for c, (f,) in kern.terms():
                out[:, s] += c * (W * inc[:, k, :]) @ f(times)
        else:
            deep.append(s)
    if not deep:
        return out, st
    if field is None:
        raise ValueError("a survival field is needed for integrals of depth >= 2")
    # outer steps where some last factor is nonzero, inner steps where some inner factor is
    outer = np.zeros(M, bool)
    inner = np.zeros(M, bool)
    for s in deep:
        kern, idx = specs[s]
        for _, fs in kern.terms():
            outer |= fs[-1](times) != 0
            for f in fs[:-1]:
                inner |= f(times) != 0
    incT = np.moveaxis(inc, 2, 0)           # (M, N, n)
    xiT = np.moveaxis(xi, 2, 0)             # (M+1, N, n)
    for j in np.flatnonzero(outer):
        live = W[:, j] != 0
        ii = np.flatnonzero(inner[:j])
        if not live.any() or ii.size == 0:
            continue
        # slices keep views when the inner range is contiguous and all paths live
        isl = slice(ii[0], ii[-1] + 1) if ii[-1] - ii[0] + 1 == ii.size else ii
        rows = slice(None) if live.all() else np.flatnonzero(live)
        x = xiT[isl][:, rows]                                 # (L, P, n)
        tt = np.broadcast_to((j * dt - times[isl])[:, None], x.shape[:-1])
        g, over = cap_vectors(field.grad_log_alpha(tt, x), cap)
        st.capped += int(over.sum())
        st.evaluated += over.size
        g *= dt
        D = incT[isl][:, rows] - g
        tj = np.array([j * dt])
        for s in deep:
            kern, idx = specs[s]
            co = idx.coords
            acc = 0.0
            for c, fs in kern.terms():
                fj = float(fs[-1](tj)[0])
                if fj == 0.0:
                    continue
                acc = acc + c * fj * _iterated(fs[:-1], co[:-1], D, times[isl])
            if np.isscalar(acc):
                continue
            out[rows, s] += acc * W[rows, j] * incT[j, rows, co[-1]]
    return out, st


def j_integral_batch(values: np.ndarray, dt: float, specs, field, drift=None, domain=None,
                     uniforms: np.ndarray | None = None, bridge: bool = True):
    """Stopped integrals of Brownian paths values (N, n, M+1) for a list of specs.

    xi solves the killed ODE with ``drift``; the exit step bounds the outer
    sums.  Returns ((N, S) values, IntegralStats, xi batch).
    """
    from .sde import solve_xi_batch
    domain = domain or field.domain
    xb = solve_xi_batch(values, dt, drift, domain, uniforms if bridge else None, bridge)
    inc = np.diff(values, axis=2)
    vals, st = stopped_integrals(xb.xi, inc, xb.step, dt, specs, field)
    return vals, st, xb


def j_integral(omega: SamplePath, kernel: SimplexKernel, index: ChaosIndex, field, drift=None,
               domain=None, bridge: bool = True) -> float:
    """J_k a along one path; depth 1 reduces to a plain stopped Ito sum."""
    if kernel.horizon > omega.grid.horizon + 1e-12:
        raise ValueError("kernel support extends beyond the grid horizon")
    us = omega.uniforms[None] if omega.uniforms is not None else None
    vals, _, _ = j_integral_batch(omega.values[None], omega.grid.dt, [(kernel, index)], field, drift,
                                  domain, us, bridge and us is not None)
    return float(vals[0, 0])


def j_norm(kernel: SimplexKernel, field, u, nodes: int = 32) -> tuple[float, float]:
    """int_{S^d} alpha(t_d, u) a(t)^2 dt with a quadrature error estimate."""
    u = np.asarray(u, float)
    w = lambda s: field.alpha(s, np.broadcast_to(u, s.shape + u.shape))
    hi = simplex_inner(kernel, kernel, w, nodes)
    lo = simplex_inner(kernel, kernel, w, nodes - 8)
    return float(hi), float(abs(hi - lo))


# ---------------------------------------------------------------------------
# recursive operators over the chain of levels

THETA_NODES = 17


def _theta_nodes(kernel: SimplexKernel, count: int) -> np.ndarray:
    lo, hi = kernel.support(kernel.arity - 1)
    return np.linspace(np.sqrt(lo), np.sqrt(hi), count) ** 2


def _interp_sqrt(nodes: np.ndarray, vals: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Per-path linear interpolation in sqrt(theta): vals (P, Q), t (M,) -> (P, M)."""
    s = np.sqrt(nodes)
    x = np.sqrt(np.clip(t, nodes[0], nodes[-1]))
    if s.size == 1:
        return np.repeat(vals[:, :1], t.size, axis=1)
    k = np.clip(np.searchsorted(s, x, side="right") - 1, 0, s.size - 2)
    w = (x - s[k]) / (s[k + 1] - s[k])
    return vals[:, k] * (1 - w) + vals[:, k + 1] * w


class FieldCache:
    """Survival fields per (level, theta); theta = 0 uses the closed form."""

    def __init__(self, factory=None):
        self.factory = factory
        self._cache = {}

    def __call__(self, m: int, theta: float):
        key = (m, round(float(theta), 12))
        if key not in self._cache:
            if theta == 0:
                self._cache[key] = ClosedFormField(WeylChamber(m))
            elif self.factory is not None:
                self._cache[key] = self.factory(m, theta)
            else:
                raise NotImplementedError(
                    "depth >= 2 integrals under a nonzero aleph drift need a field factory "
                    "(for instance the pde-grid backend)")
        return self._cache[key]


def _level_stopped(lv, rows, dt, specs, drift_fn, fields, m, theta, weight=None):
    """Stopped integrals at level m >= 2 along the drift-removed path.

    The path omega is its own xi; G(omega) has increments d omega - aleph dt.
    """
    X = lv.values[rows]
    inc = np.diff(X, axis=2)
    step = lv.step[rows]
    st = IntegralStats()
    if drift_fn is not None:
        M = inc.shape[2]
        live = (step[:, None] < 0) | (np.arange(M)[None, :] <= step[:, None])
        pts = np.moveaxis(X[:, :, :-1], 1, 2)[live]
        a, over = cap_vectors(drift_fn(pts))
        st.capped += int(over.sum())
        st.evaluated += over.size
        full = np.zeros((X.shape[0], M, X.shape[1]))
        full[live] = a
        inc = inc - np.moveaxis(full, 2, 1) * dt
    need_field = any(idx.d >= 2 for _, idx in specs)
    fld = fields(m, theta) if need_field else None
    vals, s2 = stopped_integrals(X, inc, step, dt, specs, fld, weight)
    st.add(s2)
    return vals, st


@dataclass
class AResult:
    values: np.ndarray          # (N, S)
    stats: IntegralStats
    capped_paths: np.ndarray    # (N,) completion cap reached at some level
    coalesced: np.ndarray       # (N,) every level exited inside the window


def a_operator_batch(lb: LevelBatch, specs, weights=None, field_factory=None,
                     theta_nodes: int = THETA_NODES, chunk: int = 2048) -> AResult:
    """Recursive integrals for (ProductKernel, MultiIndex) specs on a level sample.

    Level m runs on its own clock from the exit position of level m+1.
    For three particles the level-3 drift aleph_theta depends on the last
    time theta of the level-2 block; the level-3 integral is evaluated on
    ``theta_nodes`` values of theta (uniform in sqrt theta) and
    interpolated along the level-2 outer sum.
    """
    n = lb.n
    N = lb.size
    grid = lb.grid
    dt = grid.dt
    M = grid.steps
    times = np.arange(M) * dt
    fields = FieldCache(field_factory)
    out = np.zeros((N, len(specs)))
    st = IntegralStats()
    for kern, idx in specs:
        if not isinstance(kern, ProductKernel):
            raise TypeError("a_operator needs ProductKernel kernels")
        if idx.n != n or kern.levels != n:
            raise ValueError(f"index/kernel levels must equal the particle count {n}")
        if kern.arities != idx.arities:
            raise ValueError(f"kernel arities {kern.arities} do not match index {idx}")
        for m in range(3, n + 1):
            if idx.components[m - 1].d and any(idx.components[l - 1].d for l in range(2, m)):
                if not (n == 3 and m == 3):
                    raise NotImplementedError("aleph drifts are implemented for three particles only")
    for lo in range(0, N, chunk):
        rows = np.arange(lo, min(N, lo + chunk))
        for s, (kern, idx) in enumerate(specs):
            total = np.zeros(rows.size)
            for c, comps in kern.terms():
                total += c * _a_term(lb, rows, comps, idx, weights, fields, theta_nodes, times, dt, st)
            out[rows, s] = total
    capped = lb.capped
    coalesced = np.ones(N, bool)
    for m in range(2, n + 1):
        coalesced &= lb.level(m).step >= 0
    return AResult(out, st, capped, coalesced)


def _a_term(lb, rows, comps, idx, weights, fields, theta_nodes, times, dt, st) -> np.ndarray:
    n = lb.n
    P = rows.size
    # level 1: plain Ito integral of the surviving particle
    lv1 = lb.level(1)
    z = ito_iterated_batch(lv1.values[rows], dt, comps[0], idx.components[0])
    if n == 1:
        return z
    coupled = n == 3 and idx.components[1].d >= 1 and idx.components[2].d >= 1
    if coupled:
        nodes = _theta_nodes(comps[1], theta_nodes)
        J = np.empty((P, nodes.size))
        for q, th in enumerate(nodes):
            dfn = None if th == 0 else (weights.drift((th,)) if weights is not None
                                        else (lambda x, th=th: aleph3(th, x, fast=True)))
            v, s3 = _level_stopped(lb.level(3), rows, dt, [(comps[2], idx.components[2])], dfn,
                                   fields, 3, th)
            J[:, q] = v[:, 0]
            st.add(s3)
        Wt = _interp_sqrt(nodes, J, times)
        v, s2 = _level_stopped(lb.level(2), rows, dt, [(comps[1], idx.components[1])], None, fields, 2, 0.0,
                               weight=Wt)
        st.add(s2)
        return z * v[:, 0]
    # no coupling: every level above 1 runs without drift
    for m in range(2, n + 1):
        v, sm = _level_stopped(lb.level(m), rows, dt, [(comps[m - 1], idx.components[m - 1])], None,
                               fields, m, 0.0)
        st.add(sm)
        z = z * v[:, 0]
    return z


def a_operator(motion: CoalescingMotion, kernel: ProductKernel, index: MultiIndex, weights=None,
               field_factory=None) -> tuple[float, bool]:
    """A a for one simulated motion; returns (value, truncated).

    The motion is split repeatedly at its collisions; a level without a
    collision on the grid leaves the recursion truncated (value still
    computed from the observed part).
    """
    lb, truncated = levels_from_motion(motion, need=1)
    res = a_operator_batch(lb, [(kernel, index)], weights, field_factory)
    return float(res.values[0, 0]), truncated


# ---------------------------------------------------------------------------
# weighted norms and inner products

def _level_weight(m: int, n: int, weights, u):
    """Weight on the last time of level m as a function of times (k,) -> (..., k)."""
    if m == 1:
        return None
    if m == 2:
        if n == 2:
            g = float(u[1] - u[0])
            return lambda s: _erf_s(g, s)
        G = weights.samples.gap
        return lambda s: _erf_s(G[:, None], s[None, :])
    tau = weights.samples.tau[m]
    return ("indicator", tau)


def _erf_s(g, s):
    from scipy.special import erf
    s = np.asarray(s, float)
    with np.errstate(divide="ignore"):
        return np.where(s > 0, erf(np.maximum(g, 0) / (2 * np.sqrt(np.where(s > 0, s, 1.0)))), 1.0)


def weighted_inner_samples(A: ProductKernel, B: ProductKernel, index: MultiIndex, weights=None, u=None,
                           nodes: int = 32) -> np.ndarray:
    """Per-sample values whose mean is the weighted inner product (one value for n <= 2).

    rho = erf(g / (2 sqrt t^2_last)) * prod_{m >= 3} 1{tau_m > t^m_last}
    with g and tau_m taken from the exit-chain samples held in ``weights``
    (n >= 3), or the closed form for n = 2.
    """
    n = index.n
    if u is None:
        u = weights.u
    u = np.asarray(u, float)
    if index.degree and sum(index.arities) > 6:
        raise ValueError("quadrature dimension above 6 is refused")
    per = 0.0
    for ca, fa in A.terms():
        for cb, fb in B.terms():
            v = ca * cb
            for m in range(1, n + 1):
                a, b = fa[m - 1], fb[m - 1]
                wt = _level_weight(m, n, weights, u)
                if a.arity == 0:
                    v = v * a.constant * b.constant
                    continue
                if isinstance(wt, tuple):
                    q = last_time_density(a, b)
                    v = v * q.cumulative()(np.minimum(wt[1], q.breaks[-1]))
                else:
                    v = v * simplex_inner(a, b, wt, nodes)
            per = per + v
    return np.atleast_1d(np.asarray(per, float))


def weighted_inner(A: ProductKernel, B: ProductKernel, index: MultiIndex, weights=None, u=None,
                   nodes: int = 32) -> tuple[float, float]:
    """int A B rho(u) dt over the product of simplices, with the Monte Carlo stderr."""
    per = weighted_inner_samples(A, B, index, weights, u, nodes)
    if per.size == 1:
        return float(per[0]), 0.0
    return float(per.mean()), float(per.std(ddof=1) / np.sqrt(per.size))


def weighted_kernel_norm(kernel: ProductKernel, index: MultiIndex, weights=None, u=None,
                         nodes: int = 32) -> tuple[float, float]:
    """Squared weighted L2 norm of a product kernel; returns (value, stderr)."""
    return weighted_inner(kernel, kernel, index, weights, u, nodes)
