"""Expansion coefficients by Monte Carlo projection onto orthonormal kernel bases.

A basis is built for one index by Gram-Schmidt (Cholesky) of a raw kernel
family against the weighted inner product of that index.  Coefficients
are E[f X_i] where X_i are the stochastic integrals of the basis elements;
the isometry makes the X_i orthonormal in L^2, so no operator is inverted.
Integrals are linear in the kernel, so they are computed once for the raw
family and mapped through the triangular factor.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field as dfield

import numpy as np

from .chaos import (ChaosIndex, MultiIndex, a_operator_batch, ito_iterated_batch, stopped_integrals,
                    weighted_inner_samples)
from .domains import WeylChamber
from .flow import Level, LevelBatch, sample_levels
from .kernels import (BoxKernel, ConstantKernel, LegendreKernel, LinearCombination, ProductKernel,
                      SimplexKernel, product_inner, simplex_inner)
from .rng import TimeGrid, as_ledger, brownian_batch
from .sde import solve_xi_batch
from .survival import ClosedFormField

COND_MAX = 1e8


class IllConditionedError(ValueError):
    pass


# ---------------------------------------------------------------------------
# weights

class UnitWeight:
    """Lebesgue measure on the simplex (plain multiple Ito integrals)."""

    def describe(self):
        return "unit"

    def gram(self, raw, index, nodes):
        R = len(raw)
        G = np.empty((R, R))
        for i in range(R):
            for j in range(i, R):
                if isinstance(raw[i], ProductKernel):
                    G[i, j] = G[j, i] = product_inner(raw[i], raw[j], nodes)
                else:
                    G[i, j] = G[j, i] = float(simplex_inner(raw[i], raw[j], None, nodes))
        return G


class AlphaWeight(UnitWeight):
    """alpha(t_d, u) on the last time (stopped integrals)."""

    def __init__(self, field, u):
        self.field = field
        self.u = np.asarray(u, float)

    def describe(self):
        return f"alpha:{self.field.key}@{','.join(map(repr, self.u.tolist()))}"

    def fn(self, s):
        return self.field.alpha(s, np.broadcast_to(self.u, s.shape + self.u.shape))

    def gram(self, raw, index, nodes):
        R = len(raw)
        G = np.empty((R, R))
        for i in range(R):
            for j in range(i, R):
                G[i, j] = G[j, i] = float(simplex_inner(raw[i], raw[j], self.fn, nodes))
        return G


class RhoWeight:
    """rho(u) on products of simplices; ``weights`` holds exit-chain samples for n >= 3.

    The Gram matrix is the sample mean of per-sample Gram matrices, each of
    which is positive semidefinite, so the mean is as well.
    """

    def __init__(self, u, weights=None):
        self.u = np.asarray(u, float)
        self.weights = weights
        if self.u.size >= 3 and weights is None:
            raise ValueError("three or more particles need RhoWeights samples")

    def describe(self):
        return "rho@" + ",".join(map(repr, self.u.tolist()))

    def gram(self, raw, index, nodes):
        R = len(raw)
        G = np.empty((R, R))
        for i in range(R):
            for j in range(i, R):
                per = weighted_inner_samples(raw[i], raw[j], index, self.weights, self.u, nodes)
                G[i, j] = G[j, i] = float(per.mean())
        return G


# ---------------------------------------------------------------------------
# raw families

def _degree_tuples(d: int, size: int):
    out = []
    for tot in itertools.count():
        for t in itertools.product(range(tot + 1), repeat=d):
            if sum(t) == tot:
                out.append(t)
                if len(out) == size:
                    return out


def legendre_family(arity: int, size: int, T: float = 1.0) -> list:
    """Legendre products on [0, T)^d ordered by total degree; the first ``size``."""
    if arity == 0:
        return [ConstantKernel(1.0)]
    return [LegendreKernel(t, [0.0] * arity, [T] * arity) for t in _degree_tuples(arity, size)]


def box_family(arity: int, pieces: int, T: float = 1.0) -> list:
    """Indicators of the cells of a uniform partition meeting the simplex."""
    if arity == 0:
        return [ConstantKernel(1.0)]
    e = np.linspace(0.0, T, pieces + 1)
    out = []
    for cell in itertools.product(range(pieces), repeat=arity):
        if all(a <= b for a, b in zip(cell[:-1], cell[1:])):
            out.append(BoxKernel([e[c] for c in cell], [e[c + 1] for c in cell]))
    return out


FAMILIES = {"legendre": legendre_family, "box": box_family}


def raw_family(index, family: str = "legendre", truncation: int = 3, T: float = 1.0) -> list:
    """Raw kernels for an index; for a MultiIndex the tensor products of per-level families."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family '{family}' (known: {', '.join(FAMILIES)})")
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    fam = FAMILIES[family]
    if isinstance(index, ChaosIndex):
        return fam(index.d, truncation, T)
    per = [fam(c.d, truncation, T) for c in index.components]
    return [ProductKernel(list(ks)) for ks in itertools.product(*per)]


# ---------------------------------------------------------------------------
# bases

@dataclass
class WeightedBasis:
    index: object                 # ChaosIndex or MultiIndex
    raw: list
    gram: np.ndarray
    factor: np.ndarray            # C with e_i = sum_j C[i, j] raw_j, C = L^{-1}
    weight: object
    nodes: int = 32

    @property
    def size(self) -> int:
        return len(self.raw)

    @property
    def label(self) -> str:
        return str(self.index)

    def element(self, i: int):
        row = self.factor[i]
        if isinstance(self.index, MultiIndex):
            terms = [(row[j] * c, cs) for j in range(i + 1) if row[j] != 0 for c, cs in self.raw[j].terms()]
            return ProductKernel(terms=terms)
        return LinearCombination([(row[j], self.raw[j]) for j in range(i + 1) if row[j] != 0])

    def elements(self) -> list:
        return [self.element(i) for i in range(self.size)]

    def transform(self, raw_values: np.ndarray) -> np.ndarray:
        """Integrals of the basis elements from those of the raw kernels (N, R)."""
        return raw_values @ self.factor.T

    def orthonormality_error(self, nodes: int | None = None) -> float:
        """max |C G' C^T - I| with G' recomputed using ``nodes`` quadrature points."""
        G = self.gram if nodes is None else self.weight.gram(self.raw, self.index, nodes)
        E = self.factor @ G @ self.factor.T
        return float(np.abs(E - np.eye(self.size)).max())


def build_basis(index, weight=None, truncation: int = 3, quadrature: int = 32, family: str = "legendre",
                T: float = 1.0, raw: list | None = None, cond_max: float = COND_MAX) -> WeightedBasis:
    """Orthonormalize a raw family against ``weight`` (UnitWeight when None)."""
    weight = weight if weight is not None else UnitWeight()
    if raw is None:
        raw = raw_family(index, family, truncation, T)
    if not raw:
        raise ValueError("empty raw family")
    G = weight.gram(raw, index, quadrature)
    if not np.allclose(G, G.T, rtol=1e-12, atol=1e-14):
        raise ValueError("Gram matrix is not symmetric")
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0 or ev[-1] / ev[0] > cond_max:
        cond = np.inf if ev[0] <= 0 else ev[-1] / ev[0]
        raise IllConditionedError(f"Gram matrix condition number {cond:.3g} exceeds {cond_max:.0e}; "
                                  "use a smaller truncation")
    L = np.linalg.cholesky(G)
    C = np.linalg.solve(L, np.eye(len(raw)))
    C = np.tril(C)
    return WeightedBasis(index, list(raw), G, C, weight, quadrature)


def tensor_basis(level_bases: list, weight) -> WeightedBasis:
    """Products of per-level orthonormal elements, re-orthonormalized against ``weight``.

    For a weight that factorizes over levels the products are already
    orthonormal and the factor is the identity up to rounding.
    """
    idx = MultiIndex(tuple(b.index for b in level_bases))
    raw = [ProductKernel(list(ks)) for ks in itertools.product(*[b.elements() for b in level_bases])]
    nodes = max(b.nodes for b in level_bases)
    return build_basis(idx, weight, raw=raw, quadrature=nodes)


# ---------------------------------------------------------------------------
# samplers: draw a sample and integrate raw kernels along it

@dataclass
class PathSample:
    paths: object                  # PathBatch
    step: np.ndarray               # exit step, -1 if none (Brownian sampler: all -1)
    tau: np.ndarray
    xi: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.paths.size


class _Sampler:
    """Integrals are cached on the sample, keyed by basis identity."""

    def integrals(self, sample, basis: WeightedBasis) -> np.ndarray:
        return self.integrals_many(sample, [basis])[0]

    def integrals_many(self, sample, bases: list) -> list:
        cache = sample.__dict__.setdefault("_integral_cache", {})
        todo = [b for b in bases if id(b) not in cache]
        if todo:
            raw = self._raw_integrals(sample, todo)
            for b, R in zip(todo, raw):
                cache[id(b)] = (b, b.transform(R))
        return [cache[id(b)][1] for b in bases]

    def _raw_integrals(self, sample, bases: list) -> list:
        raise NotImplementedError


def _split(vals: np.ndarray, bases: list) -> list:
    out, lo = [], 0
    for b in bases:
        out.append(vals[:, lo:lo + b.size])
        lo += b.size
    return out


class BrownianSampler(_Sampler):
    """n-dimensional Brownian motion and plain multiple Ito integrals."""

    kind = "brownian"

    def __init__(self, u, grid: TimeGrid):
        self.u = np.asarray(u, float)
        self.grid = grid

    def draw(self, N: int, seed) -> PathSample:
        pb = brownian_batch(self.u, self.grid, N, seed)
        return PathSample(pb, np.full(N, -1), np.full(N, np.inf))

    def _raw_integrals(self, sample: PathSample, bases: list) -> list:
        v = sample.paths.values
        return [np.column_stack([ito_iterated_batch(v, self.grid.dt, k, b.index) for k in b.raw])
                for b in bases]


class StoppedSampler(BrownianSampler):
    """Brownian motion from u stopped on leaving G; stopped integrals J."""

    kind = "stopped"

    def __init__(self, u, grid: TimeGrid, field=None, drift=None):
        super().__init__(u, grid)
        self.field = field if field is not None else ClosedFormField(WeylChamber(self.u.size))
        self.drift = drift

    def draw(self, N: int, seed) -> PathSample:
        pb = brownian_batch(self.u, self.grid, N, seed)
        xb = solve_xi_batch(pb.values, self.grid.dt, self.drift, self.field.domain, pb.uniforms, True)
        return PathSample(pb, xb.step, xb.tau, xb.xi)

    def _raw_integrals(self, sample: PathSample, bases: list) -> list:
        # one call shares the inner-path corrections across all indices
        specs = [(k, b.index) for b in bases for k in b.raw]
        vals, _ = stopped_integrals(sample.xi, sample.paths.increments, sample.step, self.grid.dt,
                                    specs, self.field)
        return _split(vals, bases)


class LevelSampler(_Sampler):
    """Chain of post-collision motions; recursive integrals A."""

    kind = "levels"

    def __init__(self, u, grid: TimeGrid, weights=None, field_factory=None):
        self.u = np.asarray(u, float)
        self.grid = grid
        self.weights = weights
        self.field_factory = field_factory

    def draw(self, N: int, seed) -> LevelBatch:
        return sample_levels(self.u, self.grid, N, seed)

    def _raw_integrals(self, sample: LevelBatch, bases: list) -> list:
        specs = [(k, b.index) for b in bases for k in b.raw]
        res = a_operator_batch(sample, specs, self.weights, self.field_factory)
        return _split(res.values, bases)


# ---------------------------------------------------------------------------
# functionals

class Functional:
    description = "functional"

    def __call__(self, sample, sampler) -> np.ndarray:
        raise NotImplementedError


class ConstantOne(Functional):
    description = "1"

    def __call__(self, sample, sampler):
        return np.ones(sample.size)


class Coordinate(Functional):
    """w_j(T ^ tau) - u_j, stopped at the end of the exit step (j is 1-based)."""

    def __init__(self, j: int, T: float | None = None):
        self.j, self.T = int(j), T
        self.description = f"coordinate:{self.j}" + (f"@{T!r}" if T is not None else "")

    def __call__(self, sample, sampler):
        if not isinstance(sample, PathSample):
            raise NotImplementedError("coordinate functionals are defined for path samplers")
        grid = sampler.grid
        k = grid.steps if self.T is None else grid.index_of(self.T)
        stop = np.where(sample.step >= 0, np.minimum(sample.step + 1, k), k)
        v = sample.paths.values[np.arange(sample.size), self.j - 1, stop]
        return v - sampler.u[self.j - 1]


class Survival(Functional):
    """1{tau > t}; for level samples tau is the first collision of the n-point motion."""

    def __init__(self, t: float):
        self.t = float(t)
        self.description = f"survival:{self.t!r}"

    def __call__(self, sample, sampler):
        tau = sample.tau if isinstance(sample, PathSample) else sample.level(sample.n).tau
        return (tau > self.t).astype(float)


class BasisElement(Functional):
    """The integral of element i of ``basis`` along the sample itself."""

    def __init__(self, basis: WeightedBasis, i: int):
        self.basis, self.i = basis, int(i)
        self.description = f"element:{basis.label}:{self.i}"

    def __call__(self, sample, sampler):
        return sampler.integrals(sample, self.basis)[:, self.i]


def parse_functional(spec: str) -> Functional:
    """``one``, ``coordinate:j[@T]`` or ``survival:t``."""
    name, _, arg = spec.strip().partition(":")
    if name == "one":
        return ConstantOne()
    if name == "coordinate":
        j, _, T = arg.partition("@")
        return Coordinate(int(j), float(T) if T else None)
    if name == "survival":
        return Survival(float(arg))
    raise ValueError(f"unknown functional '{spec}' (known: one, coordinate:j[@T], survival:t)")


# ---------------------------------------------------------------------------
# coefficient tables

def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class CoefficientTable:
    description: str
    N: int
    rows: list = dfield(default_factory=list)     # dicts: index, degree, element, estimate, stderr
    cov: np.ndarray | None = None                  # covariance of the estimates, row order

    def add(self, index, element: int, estimate: float, stderr: float):
        degree = index.degree if isinstance(index, MultiIndex) else index.d
        self.rows.append({"index": str(index), "degree": int(degree), "element": int(element),
                          "estimate": float(estimate), "stderr": float(stderr)})

    def vector(self, index=None) -> tuple[np.ndarray, np.ndarray]:
        sel = [r for r in self.rows if index is None or r["index"] == str(index)]
        return np.array([r["estimate"] for r in sel]), np.array([r["stderr"] for r in sel])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["index", "degree", "element", "estimate", "stderr", "N"])
        for r in self.rows:
            w.writerow([r["index"], r["degree"], r["element"], fmt(r["estimate"]), fmt(r["stderr"]), self.N])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"description": self.description, "N": self.N, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def project(functional: Functional, bases, sampler, N: int, seed) -> CoefficientTable:
    """c_i = mean of f * X_i over N samples, for every element of every basis."""
    if isinstance(bases, WeightedBasis):
        bases = [bases]
    return project_sample(functional, bases, sampler, sampler.draw(N, as_ledger(seed)))


def project_sample(functional: Functional, bases, sampler, sample) -> CoefficientTable:
    """``project`` on an existing sample; integrals cached on it are reused."""
    if isinstance(bases, WeightedBasis):
        bases = [bases]
    Xs = sampler.integrals_many(sample, list(bases))
    f = np.asarray(functional(sample, sampler), float)
    return _table(functional.description, f, list(zip(bases, Xs)))


def _table(description, f, pairs) -> CoefficientTable:
    N = f.size
    prods, keys = [], []
    for b, X in pairs:
        for i in range(b.size):
            prods.append(f * X[:, i])
            keys.append((b.index, i))
    P = np.array(prods).T if prods else np.zeros((N, 0))
    est = P.mean(axis=0)
    cov = np.atleast_2d(np.cov(P, rowvar=False)) / N if N > 1 and P.shape[1] else np.zeros((P.shape[1],) * 2)
    se = np.sqrt(np.clip(np.diag(cov), 0, None)) if P.shape[1] else np.zeros(0)
    tab = CoefficientTable(description, N, cov=cov)
    for (idx, i), e, s in zip(keys, est, se):
        tab.add(idx, i, e, s)
    return tab


def project_two_stage(functional: Functional, level_bases: list, sampler: LevelSampler, N_outer: int,
                      N_inner: int, seed, group: int = 32) -> CoefficientTable:
    """Two-particle projection through the recursion: inner post-collision, then pre-collision.

    For each of N_outer pre-collision paths, N_inner fresh post-collision
    paths are drawn from its exit position; the inner means of f times the
    level-1 integrals are then integrated against the level-2 stopped
    integrals.  ``level_bases`` = [level-1 basis, level-2 basis].
    """
    if sampler.u.size != 2:
        raise NotImplementedError("the two-stage projection is implemented for two particles")
    b1, b2 = level_bases
    tb = tensor_basis(level_bases, RhoWeight(sampler.u))
    ledger = as_ledger(seed)
    outer = sampler.draw(N_outer, ledger.child(0))
    grid = sampler.grid
    dt = grid.dt
    one = ConstantKernel(1.0)
    G = np.empty((N_outer, b1.size))
    J2 = np.empty((N_outer, b2.size))
    for lo in range(0, N_outer, group):
        rows = np.arange(lo, min(N_outer, lo + group))
        sub = _subset(outer, rows)
        # level-2 stopped integrals along the outer paths
        spec2 = [(ProductKernel([one, k]), MultiIndex((ChaosIndex(1, ()), b2.index))) for k in b2.raw]
        J2[rows] = b2.transform(a_operator_batch(sub, spec2).values)
        rep = _repeat_with_fresh_level1(sub, N_inner, grid, ledger.child(1, lo))
        f = np.asarray(functional(rep, sampler), float)
        I1 = b1.transform(np.column_stack([ito_iterated_batch(rep.level(1).values, dt, k, b1.index)
                                           for k in b1.raw]))
        G[rows] = (f[:, None] * I1).reshape(rows.size, N_inner, b1.size).mean(axis=1)
    P = np.einsum("ni,nj->nij", G, J2).reshape(N_outer, -1)
    est = P.mean(axis=0)
    cov = np.atleast_2d(np.cov(P, rowvar=False)) / N_outer
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    tab = CoefficientTable(functional.description + " (two-stage)", N_outer, cov=cov)
    for e, s, i in zip(est, se, range(tb.size)):
        tab.add(tb.index, i, e, s)
    return tab


def _subset(lb: LevelBatch, rows) -> LevelBatch:
    out = LevelBatch(lb.grid, lb.u, {}, lb.ledger)
    for m, lv in lb.levels.items():
        take = lambda a: None if a is None else a[rows]
        out.levels[m] = Level(m, take(lv.start), take(lv.values), take(lv.uniforms), take(lv.tau),
                              take(lv.step), take(lv.pair), take(lv.exit_pos), take(lv.capped))
    return out


def _repeat_with_fresh_level1(lb: LevelBatch, K: int, grid: TimeGrid, ledger) -> LevelBatch:
    rows = np.repeat(np.arange(lb.size), K)
    out = _subset(lb, rows)
    start = lb.level(2).exit_pos[rows]
    pb = brownian_batch(start, grid, rows.size, ledger)
    size = rows.size
    out.levels[1] = Level(1, start, pb.values, pb.uniforms, np.full(size, np.inf), np.full(size, -1),
                          np.full(size, -1), None, np.zeros(size, bool))
    return out


def second_moment(functional: Functional, sampler, N: int, seed) -> tuple[float, float]:
    """E[f^2] with its stderr on its own seed stream."""
    sample = sampler.draw(N, as_ledger(seed))
    f2 = np.asarray(functional(sample, sampler), float) ** 2
    return float(f2.mean()), float(f2.std(ddof=1) / np.sqrt(f2.size)) if f2.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Parseval / Bessel

@dataclass
class ParsevalReport:
    levels: list           # truncation degrees
    partial: list          # sum of c_i^2 over degree <= level
    partial_stderr: list   # delta-method stderr of the partial sums
    debiased: list         # partial sums of c_i^2 - stderr_i^2
    ratio: list
    combined_stderr: list  # stderr of partial - E f^2
    second_moment: tuple
    monotone: bool
    bessel: bool

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["second_moment"] = list(self.second_moment)
        return d


def parseval_report(table: CoefficientTable, f_second_moment: tuple[float, float]) -> ParsevalReport:
    """Partial sums of squared coefficients per truncation degree against E[f^2]."""
    m2, m2se = f_second_moment
    est = np.array([r["estimate"] for r in table.rows])
    se = np.array([r["stderr"] for r in table.rows])
    deg = np.array([r["degree"] for r in table.rows])
    cov = table.cov if table.cov is not None else np.diag(se ** 2)
    levels = sorted(set(deg.tolist()))
    partial, pse, deb, ratio, comb = [], [], [], [], []
    for L in levels:
        sel = deg <= L
        c = est[sel]
        S = float(c @ c)
        v = 4.0 * float(c @ cov[np.ix_(sel, sel)] @ c)
        partial.append(S)
        pse.append(float(np.sqrt(max(v, 0.0))))
        deb.append(float(S - (se[sel] ** 2).sum()))
        ratio.append(S / m2 if m2 else float("nan"))
        comb.append(float(np.hypot(pse[-1], m2se)))
    monotone = all(b >= a for a, b in zip(partial[:-1], partial[1:]))
    bessel = all(S <= m2 + 3 * c for S, c in zip(partial, comb))
    return ParsevalReport(levels, partial, pse, deb, ratio, comb, (m2, m2se), monotone, bessel)


# ---------------------------------------------------------------------------
# closed-form Clark integrands

class ClarkIntegrand:
    """g = mean + sum_j h(t_j, path) . (w_{j+1} - w_j) with an analytic integrand h."""

    tag = ""

    def mean(self) -> float:
        raise NotImplementedError

    def functional(self, sample: PathSample, grid: TimeGrid) -> np.ndarray:
        raise NotImplementedError

    def integrand(self, s: np.ndarray, x: np.ndarray, alive: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ito_sum(self, sample: PathSample, grid: TimeGrid) -> np.ndarray:
        v = sample.paths.values
        N, n, K = v.shape
        M = K - 1
        ts = np.arange(M) * grid.dt
        alive = (sample.step[:, None] < 0) | (np.arange(M)[None, :] <= sample.step[:, None])
        x = np.moveaxis(v[:, :, :-1], 1, 2)                    # (N, M, n)
        h = self.integrand(np.broadcast_to(ts, (N, M)), x, alive)
        return np.einsum("jmn,jnm->j", h, np.diff(v, axis=2))

    def residual(self, sample: PathSample, grid: TimeGrid) -> np.ndarray:
        return self.functional(sample, grid) - self.mean() - self.ito_sum(sample, grid)


class CoordinateAtT(ClarkIntegrand):
    """w_j(T): integrand 1_{[0,T)} e_j."""

    tag = "coordinate-at-T"

    def __init__(self, u, j: int, T: float):
        self.u, self.j, self.T = np.asarray(u, float), int(j), float(T)

    def mean(self):
        return float(self.u[self.j - 1])

    def functional(self, sample, grid):
        return sample.paths.values[:, self.j - 1, grid.index_of(self.T)]

    def integrand(self, s, x, alive):
        h = np.zeros(x.shape)
        h[..., self.j - 1] = s < self.T - 1e-12
        return h

    def ito_sum(self, sample, grid):
        # unstopped: the integrand does not see the exit
        s = PathSample(sample.paths, np.full(sample.size, -1), sample.tau, sample.xi)
        return super().ito_sum(s, grid)


class SurvivalIndicator(ClarkIntegrand):
    """1{tau > t}: integrand 1{s < tau} grad alpha(t - s, xi(s)) for s < t."""

    tag = "survival-indicator"

    def __init__(self, u, t: float, field=None):
        self.u = np.asarray(u, float)
        self.t = float(t)
        self.field = field if field is not None else ClosedFormField(WeylChamber(self.u.size))

    def mean(self):
        return float(self.field.alpha(self.t, self.u))

    def functional(self, sample, grid):
        return (sample.tau > self.t).astype(float)

    def integrand(self, s, x, alive):
        live = alive & (s < self.t - 1e-12)
        h = np.zeros(x.shape)
        if live.any():
            h[live] = self.field.grad_alpha(self.t - s[live], x[live])[1]
        return h


CLARK_TAGS = {"coordinate-at-T": CoordinateAtT, "survival-indicator": SurvivalIndicator}


def clark_integrand(tag: str, **params) -> ClarkIntegrand:
    if tag not in CLARK_TAGS:
        raise NotImplementedError(f"no closed-form Clark integrand for '{tag}' "
                                  f"(supported: {', '.join(CLARK_TAGS)})")
    return CLARK_TAGS[tag](**params)
