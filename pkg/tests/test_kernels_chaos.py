import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from arratia_chaos.chaos import ChaosIndex, MultiIndex, ito_iterated_batch, j_integral_batch, j_norm
from arratia_chaos.domains import WeylChamber
from arratia_chaos.kernels import (BoxKernel, ConstantKernel, LegendreKernel, parse_kernel, parse_product,
                                   simplex_inner, zero_kernel)
from arratia_chaos.rng import brownian_batch, make_grid
from arratia_chaos.survival import ClosedFormField


def simplex_gauss(f, breaks, T=1.0, order=12):
    # int_{0 < s < t < T} f(s, t), Gauss-Legendre on every piece between breakpoints;
    # exact for piecewise polynomials of degree < 2 * order
    x, w = np.polynomial.legendre.leggauss(order)
    br = np.unique(np.clip(np.r_[0.0, T, breaks], 0, T))
    total = 0.0
    for a, b in zip(br[:-1], br[1:]):
        tt = (a + b) / 2 + (b - a) / 2 * x
        for t, wt in zip(tt, w * (b - a) / 2):
            inner = np.r_[br[br < t], t]
            for c, d in zip(inner[:-1], inner[1:]):
                ss = (c + d) / 2 + (d - c) / 2 * x
                total += wt * np.sum(w * (d - c) / 2 * f(ss, np.full_like(ss, t)))
    return total


edges = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2).map(sorted).filter(lambda p: p[1] - p[0] > 0.05)


@settings(max_examples=25, deadline=None)
@given(edges, edges, st.integers(0, 2), st.integers(0, 2))
def test_simplex_inner_vs_gauss_oracle(b1, b2, d1, d2):
    a = LegendreKernel([d1, d2], [b1[0], b2[0]], [b1[1], b2[1]])
    b = BoxKernel([0.0, 0.2], [0.7, 1.0])
    ref = simplex_gauss(lambda s, t: a(s, t) * b(s, t), [*b1, *b2, 0.2, 0.7])
    assert abs(simplex_inner(a, b) - ref) < 1e-7


def test_weighted_inner_vs_gauss_oracle():
    a = parse_kernel("legendre:1,1@0-1,0-1")
    ref = simplex_gauss(lambda s, t: a(s, t) ** 2 * np.exp(-t), [], order=30)
    got = simplex_inner(a, a, lambda s: np.exp(-s))
    assert abs(got - ref) < 1e-8


def test_box_and_constant_values():
    assert abs(simplex_inner(BoxKernel([0, 0], [1, 1]), BoxKernel([0, 0], [1, 1])) - 0.5) < 1e-14
    assert ConstantKernel(3.0).constant == 3.0
    assert simplex_inner(zero_kernel(2), BoxKernel([0, 0], [1, 1])) == 0.0
    assert abs(simplex_inner(parse_kernel("const:1,3"), parse_kernel("const:1,3")) - 1 / 6) < 1e-13


def test_parse_errors_and_sums():
    with pytest.raises(ValueError):
        parse_kernel("spline:1")
    k = parse_kernel("2*box:0-0.5 + box:0.5-1")
    assert float(k(0.25)) == 2.0 and float(k(0.75)) == 1.0
    assert parse_product("const:2|box:0-1").arities == (0, 1)


def test_index_validation():
    with pytest.raises(ValueError):
        ChaosIndex(2, (3,))
    with pytest.raises(ValueError):
        MultiIndex((ChaosIndex(2, (1,)),))
    m = MultiIndex.parse("|1,2")
    assert m.degree == 2 and m.arities == (0, 2) and str(m) == "()|(1,2)"


def test_ito_integral_depth_one_is_terminal_value():
    g = make_grid(1.0, 64)
    pb = brownian_batch([0.0, 0.0], g, 100, 4)
    v = ito_iterated_batch(pb.values, g.dt, BoxKernel([0.0], [1.0]), ChaosIndex(2, (2,)))
    np.testing.assert_allclose(v, pb.values[:, 1, -1] - pb.values[:, 1, 0], atol=1e-12)


def test_ito_depth_two_same_coordinate_identity():
    # sum_{i<j} dW_i dW_j = (W^2 - sum dW^2) / 2 exactly for the discrete sums
    g = make_grid(1.0, 128)
    pb = brownian_batch([0.0], g, 200, 5)
    v = ito_iterated_batch(pb.values, g.dt, BoxKernel([0, 0], [1, 1]), ChaosIndex(1, (1, 1)))
    inc = np.diff(pb.values[:, 0], axis=1)
    np.testing.assert_allclose(v, (inc.sum(1) ** 2 - (inc ** 2).sum(1)) / 2, atol=1e-12)


@pytest.mark.parametrize("spec,index", [("box:0-1", "1"), ("legendre:1,0@0-1,0-1", "1,2"),
                                        ("box:0-0.5,0.5-1", "2,2")])
def test_ito_isometry(spec, index):
    g = make_grid(1.0, 128)
    k = parse_kernel(spec)
    vals = ito_iterated_batch(brownian_batch([0.0, 1.0], g, 20000, 6).values, g.dt, k, ChaosIndex.parse(2, index))
    m, se = (vals ** 2).mean(), (vals ** 2).std() / np.sqrt(vals.size)
    # the left-point sums carry an O(dt) bias
    assert abs(m - simplex_inner(k, k)) < 3 * se + 2 * g.dt


def test_j_zero_kernel_vanishes():
    g = make_grid(1.0, 64)
    pb = brownian_batch([0.0, 1.0], g, 50, 7)
    f = ClosedFormField(WeylChamber(2))
    v, _, _ = j_integral_batch(pb.values, g.dt, [(zero_kernel(2), ChaosIndex(2, (1, 2)))], f,
                               uniforms=pb.uniforms)
    assert np.all(v == 0)


def test_j_norm_depth_one_vs_scipy():
    f = ClosedFormField(WeylChamber(2))
    ref, _ = integrate.quad(lambda t: float(f.alpha(t, [0.0, 1.0])), 0, 1)
    got, err = j_norm(BoxKernel([0.0], [1.0]), f, [0.0, 1.0])
    assert abs(got - ref) <= err < 1e-6
