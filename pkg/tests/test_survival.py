import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arratia_chaos.domains import HalfLine, WeylChamber
from arratia_chaos.sde import constant_drift
from arratia_chaos.survival import (ClosedFormField, FloorError, PDEMesh, alpha_halfline, alpha_karlin_mcgregor,
                                    alpha_monte_carlo, alpha_pde, alpha_s2_closed, alpha_weyl)

gap = st.floats(0.05, 4.0)
time = st.floats(0.05, 5.0)


def test_s2_reference_value():
    assert abs(alpha_s2_closed(1.0, [0.0, 2.0]) - 0.8427007929497149) < 1e-12


@given(gap, time)
def test_s2_matches_mpmath(g, t):
    ref = float(mpmath.erf(mpmath.mpf(g) / (2 * mpmath.sqrt(t))))
    assert abs(alpha_s2_closed(t, [0.0, g]) - ref) < 1e-13


@given(st.floats(0.01, 4.0), time)
def test_halfline_matches_mpmath(x, t):
    ref = float(mpmath.erf(mpmath.mpf(x) / mpmath.sqrt(2 * t)))
    assert abs(float(alpha_halfline(t, [x])) - ref) < 1e-13


def test_boundary_and_time_zero():
    assert alpha_s2_closed(0.0, [0.0, 1.0]) == 1.0
    assert float(alpha_weyl(1.0, [0.0, 0.0])) == 0.0
    with pytest.raises(ValueError):
        alpha_s2_closed(1.0, [1.0, 0.0])


@settings(max_examples=15, deadline=None)
@given(gap, gap, st.floats(0.2, 3.0))
def test_three_points_closed_vs_determinant(g1, g2, t):
    u = [0.0, g1, g1 + g2]
    km, err = alpha_karlin_mcgregor(t, u)
    assert abs(float(alpha_weyl(t, u)) - km) < 1e-6 + 10 * err


@settings(max_examples=5, deadline=None)
@given(gap, gap, gap)
def test_four_points_pfaffian_vs_determinant(g1, g2, g3):
    u = np.cumsum([0.0, g1, g2, g3])
    km, err = alpha_karlin_mcgregor(1.0, u)
    assert abs(float(alpha_weyl(1.0, u)) - km) < 1e-6 + 10 * err


@given(gap, gap, st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_monotone_in_time_and_gap(g1, g2, t, s):
    u = [0.0, g1, g1 + g2]
    lo, hi = sorted([t, s])
    assert alpha_weyl(hi, u) <= alpha_weyl(lo, u) + 1e-14
    assert alpha_weyl(t, [0.0, g1 + 0.1, g1 + g2 + 0.2]) >= alpha_weyl(t, u) - 1e-14


@pytest.mark.parametrize("n", [2, 3])
def test_gradient_vs_finite_difference(n):
    f = ClosedFormField(WeylChamber(n))
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = np.cumsum(rng.uniform(0.2, 2.0, n))
        t = rng.uniform(0.3, 2.0)
        _, g = f.grad_alpha(t, u)
        h = 1e-6
        fd = [(f.alpha(t, u + h * e) - f.alpha(t, u - h * e)) / (2 * h) for e in np.eye(n)]
        np.testing.assert_allclose(g, fd, atol=1e-6)


def test_gradient_far_inside_is_finite():
    f = ClosedFormField(WeylChamber(3))
    _, g = f.grad_alpha(0.01, [0.0, 30.0, 60.0])
    assert np.all(np.isfinite(g))


def test_log_gradient_floor():
    f = ClosedFormField(WeylChamber(2))
    with pytest.raises(FloorError):
        f.grad_log_alpha(10.0, [0.0, 1e-14])


def test_monte_carlo_within_binomial_error():
    v, se = alpha_monte_carlo(None, [0.0, 1.0], 1.0, 20000, 11, M=256)
    assert abs(v - alpha_s2_closed(1.0, [0.0, 1.0])) < 4 * se


def test_pde_matches_closed_form():
    fld = alpha_pde(None, WeylChamber(2), PDEMesh(h=0.025, dt=0.005))
    for g in (0.3, 1.0, 2.0):
        assert abs(float(fld.alpha(1.0, [0.0, g])) - alpha_s2_closed(1.0, [0.0, g])) < 2e-3


def test_pde_with_drift_vs_monte_carlo():
    # a constant drift pushing the particles apart raises survival
    drift = constant_drift([-0.5, 0.5])
    fld = alpha_pde(drift, WeylChamber(2), PDEMesh(h=0.025, dt=0.005))
    v, se = alpha_monte_carlo(drift, [0.0, 1.0], 1.0, 20000, 12, M=256)
    assert abs(float(fld.alpha(1.0, [0.0, 1.0])) - v) < 4 * se + 2e-3
    assert v > alpha_s2_closed(1.0, [0.0, 1.0])


def test_halfline_field():
    f = ClosedFormField(HalfLine())
    assert abs(float(f.alpha(1.0, [1.0])) - float(mpmath.erf(1 / mpmath.sqrt(2)))) < 1e-13
