import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from arratia_chaos.chaos import ChaosIndex, MultiIndex
from arratia_chaos.domains import WeylChamber
from arratia_chaos.kernels import BoxKernel
from arratia_chaos.projection import (AlphaWeight, BrownianSampler, CoefficientTable, ConstantOne, Coordinate,
                                      IllConditionedError, RhoWeight, StoppedSampler, Survival, build_basis,
                                      clark_integrand, parse_functional, parseval_report, project,
                                      project_sample, raw_family, tensor_basis)
from arratia_chaos.rng import make_grid
from arratia_chaos.survival import ClosedFormField

U = [0.0, 1.0]
FIELD = ClosedFormField(WeylChamber(2))
AW = AlphaWeight(FIELD, U)
alpha = lambda s: float(FIELD.alpha(s, U))


def test_disjoint_boxes_are_rescaled():
    b = build_basis(ChaosIndex(2, (1,)), AW, truncation=4, family="box")
    assert np.allclose(b.gram, np.diag(np.diag(b.gram)), atol=0)
    np.testing.assert_allclose(b.factor, np.diag(1 / np.sqrt(np.diag(b.gram))), rtol=1e-13)
    for i, (lo, hi) in enumerate([(0, .25), (.25, .5), (.5, .75), (.75, 1)]):
        ref, _ = integrate.quad(alpha, lo, hi, epsabs=1e-13)
        assert abs(b.gram[i, i] - ref) < 1e-9


def test_nested_supports_gram_vs_quadrature():
    raw = [BoxKernel([0.0], [1.0]), BoxKernel([0.0], [0.5]), BoxKernel([0.25], [0.5])]
    b = build_basis(ChaosIndex(2, (2,)), AW, raw=raw)
    sup = [(0, 1), (0, .5), (.25, .5)]
    for i in range(3):
        for j in range(3):
            lo, hi = max(sup[i][0], sup[j][0]), min(sup[i][1], sup[j][1])
            ref, _ = integrate.quad(alpha, lo, hi, epsabs=1e-13)
            assert abs(b.gram[i, j] - ref) < 1e-9
    assert b.orthonormality_error() < 1e-12


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["1", "2", "1,2", "2,2", "1,1,2"]), st.integers(1, 3), st.sampled_from(["legendre", "box"]))
def test_orthonormal_under_refined_quadrature(index, trunc, family):
    b = build_basis(ChaosIndex.parse(2, index), AW, truncation=trunc, family=family)
    assert b.orthonormality_error() < 1e-10
    assert b.orthonormality_error(nodes=48) < 1e-6
    assert np.all(np.triu(b.factor, 1) == 0)


def test_duplicate_raw_is_ill_conditioned():
    k = BoxKernel([0.0], [1.0])
    with pytest.raises(IllConditionedError):
        build_basis(ChaosIndex(2, (1,)), AW, raw=[k, k])
    with pytest.raises(ValueError):
        raw_family(ChaosIndex(2, (1,)), "wavelet")


def test_tensor_basis_of_factorizing_weight_is_identity():
    b1 = build_basis(ChaosIndex(1, (1,)), None, truncation=2)
    b2 = build_basis(ChaosIndex(2, (2,)), None, truncation=2)
    t = tensor_basis([b1, b2], None)
    np.testing.assert_allclose(t.factor, np.eye(4), atol=1e-10)
    assert t.index == MultiIndex(((1,), (2,)))


def test_rho_weight_needs_samples_for_three_points():
    with pytest.raises(ValueError):
        RhoWeight([0.0, 1.0, 2.0])


@pytest.fixture(scope="module")
def stopped():
    grid = make_grid(1.0, 256)
    sampler = StoppedSampler(U, grid)
    bases = [build_basis(ChaosIndex.parse(2, i), AW, truncation=2) for i in ("", "1", "2")]
    return sampler, bases, sampler.draw(8000, 21)


def test_constant_functional(stopped):
    sampler, bases, sample = stopped
    tab = project_sample(ConstantOne(), bases, sampler, sample)
    c, se = tab.vector()
    assert c[0] == 1.0 and se[0] == 0.0
    assert np.all(np.abs(c[1:]) < 4 * se[1:])


def test_coordinate_functional_vs_quadrature(stopped):
    # E[(w_1 stopped) J(e)] = int alpha e for the constant element of index (1)
    sampler, bases, sample = stopped
    tab = project_sample(Coordinate(1), bases, sampler, sample)
    c, se = tab.vector(ChaosIndex(2, (1,)))
    ref = np.sqrt(integrate.quad(alpha, 0, 1)[0])
    assert abs(c[0] - ref) < 4 * se[0] + 2 * sampler.grid.dt ** 0.5
    c2, se2 = tab.vector(ChaosIndex(2, (2,)))
    assert np.all(np.abs(c2) < 4 * se2)


def test_survival_parseval_is_bessel(stopped):
    sampler, bases, sample = stopped
    tab = project_sample(Survival(1.0), bases, sampler, sample)
    c, _ = tab.vector(ChaosIndex(2, ()))
    assert abs(c[0] - alpha(1.0)) < 0.02
    f = (sample.tau > 1.0).astype(float)
    rep = parseval_report(tab, (f.mean(), f.std() / np.sqrt(f.size)))
    assert rep.monotone and rep.bessel
    assert rep.levels == [0, 1]


def test_plain_ito_projection_recovers_element():
    grid = make_grid(1.0, 128)
    sampler = BrownianSampler([0.0], grid)
    b = build_basis(ChaosIndex(1, (1, 1)), None, truncation=3)
    from arratia_chaos.projection import BasisElement
    tab = project(BasisElement(b, 1), [b], sampler, 6000, 22)
    c, se = tab.vector()
    e = np.zeros(3)
    e[1] = 1
    assert np.all(np.abs(c - e) < 4 * se + 0.05)


def test_table_csv_format():
    tab = CoefficientTable("t", 10)
    tab.add(ChaosIndex(2, (1, 2)), 0, 0.1, 1e-3)
    rows = list(csv.reader(io.StringIO(tab.to_csv())))
    assert rows[0] == ["index", "degree", "element", "estimate", "stderr", "N"]
    assert rows[1] == ["(1,2)", "2", "0", "0.10000000000000001", "0.001", "10"]
    assert tab.to_csv().endswith("\r\n")


def test_parse_functional():
    assert parse_functional("coordinate:2@0.5").T == 0.5
    assert isinstance(parse_functional("one"), ConstantOne)
    with pytest.raises(ValueError):
        parse_functional("max:1")


def test_clark_coordinate_exact_and_unknown_tag():
    grid = make_grid(1.0, 64)
    sampler = StoppedSampler(U, grid)
    s = sampler.draw(200, 23)
    g = clark_integrand("coordinate-at-T", u=U, j=2, T=0.5)
    assert np.max(np.abs(g.residual(s, grid))) < 1e-12
    with pytest.raises(NotImplementedError):
        clark_integrand("max-functional")


def test_clark_survival_residual_small():
    grid = make_grid(1.0, 512)
    sampler = StoppedSampler(U, grid)
    s = sampler.draw(3000, 24)
    r = clark_integrand("survival-indicator", u=U, t=1.0).residual(s, grid)
    f = (s.tau > 1.0).astype(float)
    assert (r ** 2).mean() < 0.1 * f.var()
