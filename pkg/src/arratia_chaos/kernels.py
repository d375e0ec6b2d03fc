"""Kernels on the ordered simplex {0 < t_1 < ... < t_d} and products of them.

Library kernels are finite sums of separable terms c * f_1(t_1) ... f_d(t_d)
whose factors are polynomials times interval indicators.  The ordering
constraint is never stored in the kernel: iterated sums and the simplex
quadrature impose it.  Separable structure gives O(M d) iterated sums and
exact piecewise-polynomial weighted norms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Legendre, Polynomial


# ---------------------------------------------------------------------------
# one-dimensional factors and piecewise polynomials

@dataclass(frozen=True)
class Factor:
    """P(t) on [lo, hi), zero elsewhere; ``poly`` holds power-basis coefficients."""

    lo: float
    hi: float
    poly: tuple = (1.0,)

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo or self.lo < 0:
            raise ValueError(f"factor support [{self.lo}, {self.hi}) is not a bounded interval in [0, inf)")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        inside = (t >= self.lo) & (t < self.hi)
        return np.where(inside, Polynomial(self.poly)(t), 0.0)

    def pieces(self) -> "PiecewisePoly":
        return PiecewisePoly(np.array([self.lo, self.hi]), [Polynomial(self.poly)])

    @classmethod
    def legendre(cls, deg: int, lo: float, hi: float) -> "Factor":
        p = Legendre.basis(deg, domain=[lo, hi]).convert(kind=Polynomial)
        return cls(lo, hi, tuple(float(c) for c in p.coef))


class PiecewisePoly:
    """Polynomials on consecutive intervals of ``breaks``; zero outside."""

    def __init__(self, breaks, polys):
        self.breaks = np.asarray(breaks, dtype=float)
        self.polys = list(polys)
        assert len(self.polys) == self.breaks.size - 1

    @classmethod
    def zero(cls):
        return cls(np.array([0.0, 1.0]), [Polynomial([0.0])])

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for k, p in enumerate(self.polys):
            m = (t >= self.breaks[k]) & (t < self.breaks[k + 1])
            if np.any(m):
                out[m] = p(t[m])
        return out

    def refine(self, breaks) -> "PiecewisePoly":
        new = np.union1d(self.breaks, breaks)
        polys = []
        for a, b in zip(new[:-1], new[1:]):
            mid = 0.5 * (a + b)
            k = np.searchsorted(self.breaks, mid, side="right") - 1
            polys.append(self.polys[k] if 0 <= k < len(self.polys) else Polynomial([0.0]))
        return PiecewisePoly(new, polys)

    def __mul__(self, other: "PiecewisePoly") -> "PiecewisePoly":
        br = np.union1d(self.breaks, other.breaks)
        a, b = self.refine(br), other.refine(br)
        return PiecewisePoly(br, [p * q for p, q in zip(a.polys, b.polys)])

    def scale(self, c: float) -> "PiecewisePoly":
        return PiecewisePoly(self.breaks, [c * p for p in self.polys])

    def __add__(self, other: "PiecewisePoly") -> "PiecewisePoly":
        br = np.union1d(self.breaks, other.breaks)
        a, b = self.refine(br), other.refine(br)
        return PiecewisePoly(br, [p + q for p, q in zip(a.polys, b.polys)])

    def cumulative(self) -> "PiecewisePoly":
        """Antiderivative vanishing at 0, continued as a constant past the last break."""
        br = self.breaks
        if br[0] > 0:
            br = np.concatenate(([0.0], br))
            pp = self.refine(br)
        else:
            pp = self
        polys = []
        acc = 0.0
        for k, p in enumerate(pp.polys):
            a, b = pp.breaks[k], pp.breaks[k + 1]
            P = p.integ()
            polys.append(P - P(a) + acc)
            acc = acc + P(b) - P(a)
        # constant tail out to a far break so evaluation past the support works
        far = max(pp.breaks[-1] * 4, pp.breaks[-1] + 1e6)
        return PiecewisePoly(np.concatenate((pp.breaks, [far])), polys + [Polynomial([acc])])

    def total(self) -> float:
        return float(sum(p.integ()(b) - p.integ()(a)
                         for p, a, b in zip(self.polys, self.breaks[:-1], self.breaks[1:])))

    def integrate_weight(self, weight, nodes: int = 32) -> np.ndarray:
        """int p(s) w(s) ds with Gauss-Legendre per piece; ``weight`` maps (k,) -> (..., k)."""
        x, w = np.polynomial.legendre.leggauss(nodes)
        total = 0.0
        for p, a, b in zip(self.polys, self.breaks[:-1], self.breaks[1:]):
            if p.degree() == 0 and p.coef[0] == 0.0:
                continue
            s = 0.5 * (b - a) * x + 0.5 * (a + b)
            total = total + np.asarray(weight(s)) @ (0.5 * (b - a) * w * p(s))
        return total


# ---------------------------------------------------------------------------
# simplex kernels

class SimplexKernel:
    """Base class: ``terms`` is a list of (coef, (Factor, ...)) of length arity."""

    arity: int
    name = "kernel"

    def terms(self):
        raise NotImplementedError

    def __call__(self, *t) -> np.ndarray:
        if len(t) == 1 and self.arity != 1:
            t = tuple(np.moveaxis(np.asarray(t[0], float), -1, 0))
        if len(t) != self.arity:
            raise ValueError(f"kernel of arity {self.arity} called with {len(t)} times")
        if self.arity == 0:
            return np.asarray(sum(c for c, _ in self.terms()), float)
        t = [np.asarray(x, float) for x in t]
        out = 0.0
        for c, fs in self.terms():
            v = c
            for f, x in zip(fs, t):
                v = v * f(x)
            out = out + v
        ordered = np.ones(np.broadcast(*t).shape, bool)
        for a, b in zip(t[:-1], t[1:]):
            ordered &= a < b
        return np.where(ordered & np.all([x > 0 for x in t], axis=0), out, 0.0)

    @property
    def constant(self) -> float:
        if self.arity:
            raise ValueError("only arity-0 kernels are constants")
        return float(sum(c for c, _ in self.terms()))

    def support(self, k: int) -> tuple[float, float]:
        """Smallest interval containing the support of coordinate k (0-based)."""
        ts = self.terms()
        if not ts:
            return (0.0, 0.0)
        return (min(fs[k].lo for _, fs in ts), max(fs[k].hi for _, fs in ts))

    @property
    def horizon(self) -> float:
        return max((self.support(k)[1] for k in range(self.arity)), default=0.0)

    def describe(self) -> str:
        return self.name

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def __rmul__(self, c: float):
        return LinearCombination([(float(c), self)])

    def __mul__(self, c: float):
        return LinearCombination([(float(c), self)])

    def __repr__(self):
        return self.describe()


class ConstantKernel(SimplexKernel):
    """Constant c on the simplex truncated to [0, T]^d; d = 0 gives the scalar c."""

    def __init__(self, c: float = 1.0, arity: int = 0, T: float = 1.0):
        self.c, self.arity, self.T = float(c), int(arity), float(T)
        self.name = f"const:{self.c!r}" + (f",{self.arity},{self.T!r}" if self.arity else "")

    def terms(self):
        return [(self.c, tuple(Factor(0.0, self.T) for _ in range(self.arity)))]


class BoxKernel(SimplexKernel):
    """Indicator of the box prod [lo_k, hi_k) intersected with the simplex."""

    def __init__(self, lo, hi):
        self.lo = tuple(float(x) for x in np.atleast_1d(lo))
        self.hi = tuple(float(x) for x in np.atleast_1d(hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("box bounds differ in length")
        self.arity = len(self.lo)
        self._factors = tuple(Factor(a, b) for a, b in zip(self.lo, self.hi))
        self.name = "box:" + ",".join(f"{a!r}-{b!r}" for a, b in zip(self.lo, self.hi))

    def terms(self):
        return [(1.0, self._factors)]


class LegendreKernel(SimplexKernel):
    """prod_k P_{deg_k} (rescaled to [lo_k, hi_k)) times the box indicator."""

    def __init__(self, degrees, lo, hi):
        self.degrees = tuple(int(d) for d in np.atleast_1d(degrees))
        box = BoxKernel(lo, hi)
        if len(self.degrees) != box.arity:
            raise ValueError("one degree per coordinate")
        self.lo, self.hi, self.arity = box.lo, box.hi, box.arity
        self._factors = tuple(Factor.legendre(d, a, b) for d, a, b in zip(self.degrees, self.lo, self.hi))
        self.name = ("legendre:" + ",".join(map(str, self.degrees)) + "@"
                     + ",".join(f"{a!r}-{b!r}" for a, b in zip(self.lo, self.hi)))

    def terms(self):
        return [(1.0, self._factors)]


class LinearCombination(SimplexKernel):
    def __init__(self, parts):
        parts = [(float(c), k) for c, k in parts]
        ar = {k.arity for _, k in parts}
        if len(ar) != 1:
            raise ValueError(f"cannot combine kernels of arities {sorted(ar)}")
        self.parts = parts
        self.arity = ar.pop()
        self.name = " + ".join(f"{c!r}*({k.describe()})" for c, k in parts)

    def terms(self):
        return [(c * ci, fs) for c, k in self.parts for ci, fs in k.terms()]


def zero_kernel(arity: int) -> SimplexKernel:
    return ConstantKernel(0.0, arity)


# ---------------------------------------------------------------------------
# kernels of several simplices

class ProductKernel:
    """sum_r c_r prod_m a^m_r(t^m) on S^{|k^1|} x ... x S^{|k^n|}.

    ``components[m-1]`` is the factor for the m-particle level.
    """

    def __init__(self, components=None, terms=None):
        if terms is None:
            terms = [(1.0, tuple(components))]
        self._terms = [(float(c), tuple(cs)) for c, cs in terms]
        lens = {len(cs) for _, cs in self._terms}
        if len(lens) != 1:
            raise ValueError("product terms must have the same number of levels")
        self.levels = lens.pop()
        for m in range(self.levels):
            ar = {cs[m].arity for _, cs in self._terms}
            if len(ar) != 1:
                raise ValueError(f"level {m + 1} factors have different arities")

    def terms(self):
        return self._terms

    @property
    def arities(self) -> tuple:
        return tuple(cs.arity for cs in self._terms[0][1])

    def __add__(self, other: "ProductKernel") -> "ProductKernel":
        return ProductKernel(terms=self._terms + other._terms)

    def __rmul__(self, c: float) -> "ProductKernel":
        return ProductKernel(terms=[(c * ci, cs) for ci, cs in self._terms])

    def __call__(self, *blocks) -> np.ndarray:
        out = 0.0
        for c, cs in self._terms:
            v = c
            for k, tb in zip(cs, blocks):
                v = v * (k(*np.atleast_1d(tb)) if k.arity else k.constant)
            out = out + v
        return out

    def describe(self) -> str:
        return " + ".join(f"{c!r}*[" + " | ".join(k.describe() for k in cs) + "]" for c, cs in self._terms)

    __repr__ = describe


# ---------------------------------------------------------------------------
# last-time densities and weighted inner products

def _factor_product(fa: Factor, fb: Factor) -> PiecewisePoly:
    return fa.pieces() * fb.pieces()


def last_time_density(a: SimplexKernel, b: SimplexKernel) -> PiecewisePoly | None:
    """q(s) = int_{0<t_1<..<t_{d-1}<s} a(t, s) b(t, s) dt as a piecewise polynomial.

    Returns None for arity 0, where the inner product is the product of constants.
    """
    if a.arity != b.arity:
        raise ValueError("arity mismatch")
    d = a.arity
    if d == 0:
        return None
    total = None
    for ca, fa in a.terms():
        for cb, fb in b.terms():
            P = None
            for k in range(d - 1):
                prod = _factor_product(fa[k], fb[k])
                P = (prod if P is None else prod * P).cumulative()
            last = _factor_product(fa[d - 1], fb[d - 1])
            q = (last if P is None else last * P).scale(ca * cb)
            total = q if total is None else total + q
    return total if total is not None else PiecewisePoly.zero()


def simplex_inner(a: SimplexKernel, b: SimplexKernel, weight=None, nodes: int = 32):
    """int_{S^d} a b w(t_d) dt; ``weight`` maps times (k,) to (..., k) or is None for w = 1."""
    if a.arity == 0:
        c = a.constant * b.constant
        if weight is None:
            return c
        return c * np.asarray(weight(np.zeros(1)))[..., 0]
    q = last_time_density(a, b)
    if weight is None:
        return q.total()
    return q.integrate_weight(weight, nodes)


def product_inner(A: ProductKernel, B: ProductKernel, nodes: int = 32) -> float:
    """Unweighted inner product on a product of simplices."""
    out = 0.0
    for ca, fa in A.terms():
        for cb, fb in B.terms():
            v = ca * cb
            for a, b in zip(fa, fb):
                v *= simplex_inner(a, b, None, nodes)
            out += v
    return float(out)


# ---------------------------------------------------------------------------
# registry: "name:params" strings from configs and the command line

def _intervals(s: str):
    lo, hi = [], []
    for part in s.split(","):
        a, b = part.split("-")
        lo.append(float(a))
        hi.append(float(b))
    return lo, hi


def _parse_const(p: str) -> SimplexKernel:
    xs = [x for x in p.split(",") if x]
    c = float(xs[0]) if xs else 1.0
    d = int(xs[1]) if len(xs) > 1 else 0
    T = float(xs[2]) if len(xs) > 2 else 1.0
    return ConstantKernel(c, d, T)


def _parse_box(p: str) -> SimplexKernel:
    if not p:
        return ConstantKernel(1.0, 0)
    return BoxKernel(*_intervals(p))


def _parse_legendre(p: str) -> SimplexKernel:
    degs, _, box = p.partition("@")
    lo, hi = _intervals(box)
    return LegendreKernel([int(x) for x in degs.split(",")], lo, hi)


REGISTRY = {"const": _parse_const, "box": _parse_box, "legendre": _parse_legendre}


def parse_kernel(spec: str) -> SimplexKernel:
    """``box:0-0.5,0.5-1``, ``legendre:1,0@0-1,0-1``, ``const:2`` or a sum ``2*box:0-1 + box:1-2``."""
    spec = spec.strip()
    if "+" in spec.replace("e+", "e"):
        parts = [s for s in spec.split(" + ")]
        if len(parts) > 1:
            return LinearCombination([(1.0, parse_kernel(s)) for s in parts])
    coef = 1.0
    if "*" in spec:
        c, spec = spec.split("*", 1)
        coef = float(c)
    name, _, params = spec.partition(":")
    if name not in REGISTRY:
        raise ValueError(f"unknown kernel '{name}' (known: {', '.join(sorted(REGISTRY))})")
    k = REGISTRY[name](params.strip())
    return k if coef == 1.0 else LinearCombination([(coef, k)])


def parse_product(spec: str) -> ProductKernel:
    """Per-level kernels separated by ``|``, level 1 first."""
    return ProductKernel([parse_kernel(s) for s in spec.split("|")])
