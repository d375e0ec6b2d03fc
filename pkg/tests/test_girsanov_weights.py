import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arratia_chaos.domains import WeylChamber
from arratia_chaos.girsanov import (NotInRangeError, g_transform_batch, phi_transform, psi_inverse,
                                    psi_inverse_batch, sample_conditioned)
from arratia_chaos.rng import brownian_batch, make_grid, sample_brownian
from arratia_chaos.sde import constant_drift
from arratia_chaos.survival import ClosedFormField, alpha_s2_closed
from arratia_chaos.weights import aleph3, aleph_field, beta3, beta_mc_table, rho_beta_recursion

S2 = ClosedFormField(WeylChamber(2))


def test_acceptance_rate_matches_alpha():
    cs = sample_conditioned([0.0, 2.0], 1.0, None, None, 2000, 1, M=256, batch=4096)
    assert abs(cs.acceptance - 0.8427007929497149) < 3 * cs.stderr + 1e-3
    assert np.all(np.diff(cs.xi[:, :, -1], axis=1) > 0)


def test_acceptance_at_time_zero_is_one():
    cs = sample_conditioned([0.0, 1.0], 0.0, None, None, 100, 2, M=16, batch=256)
    assert cs.acceptance == 1.0


def test_low_acceptance_refused():
    with pytest.raises(ValueError, match="h-transform"):
        sample_conditioned([0.0, 0.01], 5.0, None, None, 10, 3, M=64, batch=256, floor=0.05)


def test_phi_then_psi_round_trip():
    g = make_grid(1.0, 256)
    hits = 0
    for s in range(20):
        om = sample_brownian([0.0, 2.0], g, s)
        try:
            eta = phi_transform(0.5, om, S2)
        except ValueError:
            continue
        back = psi_inverse(0.5, eta.path, S2)
        hits += 1
        assert np.max(np.abs(back.values - om.values)) < 5 * g.dt * 10
    assert hits > 10


def test_psi_rejects_paths_outside_image():
    g = make_grid(1.0, 64)
    eta = brownian_batch([0.0, 1.0], g, 1, 4).path(0)
    eta.values[0, :] = np.linspace(0, 5, 65)   # first coordinate runs through the second
    with pytest.raises(NotInRangeError):
        psi_inverse(1.0, eta, S2)


def test_phi_refuses_dead_paths():
    g = make_grid(1.0, 64)
    om = brownian_batch([0.0, 1.0], g, 1, 5).path(0)
    om.values[1] = om.values[0] + np.linspace(1, -1, 65)
    with pytest.raises(ValueError, match="lifetime"):
        phi_transform(1.0, om, S2)


def test_g_transform_zero_drift_is_stopped_path():
    g = make_grid(1.0, 64)
    pb = brownian_batch([0.0, 0.5], g, 30, 6)
    gb = g_transform_batch(pb.values, g.dt, None, uniforms=pb.uniforms)
    for i in range(30):
        k = gb.step[i]
        if k < 0:
            np.testing.assert_allclose(gb.values[i], pb.values[i])
        else:
            np.testing.assert_allclose(gb.values[i, :, : k + 2], pb.values[i, :, : k + 2])
            assert np.all(gb.values[i, :, k + 1:] == gb.values[i, :, [k + 1]].T)


def test_g_transform_removes_constant_drift():
    g = make_grid(1.0, 64)
    c = constant_drift([-1.0, 1.0])
    pb = brownian_batch([0.0, 10.0], g, 5, 7)
    gb = g_transform_batch(pb.values, g.dt, c, uniforms=pb.uniforms)
    shift = np.broadcast_to(np.array([1.0, -1.0])[:, None] * g.times, pb.values.shape)
    np.testing.assert_allclose(gb.values - pb.values, shift, atol=1e-12)


def test_beta_limits():
    assert np.all(beta3(0.0, np.array([[0.0, 1.0, 2.0]])) == 1.0)
    far = float(beta3(0.5, np.array([0.0, 40.0, 80.0])))
    near = float(beta3(0.5, np.array([0.0, 0.5, 1.0])))
    assert 0 < near < far <= 1


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(0.2, 2.0), st.floats(0.1, 2.0))
def test_aleph_is_gradient_of_log_beta(g1, g2, th):
    x = np.array([0.0, g1, g1 + g2])
    h = 1e-5
    fd = [(np.log(beta3(th, x + h * e)) - np.log(beta3(th, x - h * e))) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(aleph3(th, x), fd, atol=2e-4)
    assert abs(aleph3(th, x).sum()) < 1e-9       # translation invariance


def test_beta_wedge_vs_monte_carlo():
    x0 = np.array([0.0, 0.6, 1.5])
    means, V = beta_mc_table(0.5, x0, [np.zeros(3)], make_grid(8.0, 2048), 6000, 8)
    se = V[:, 0].std() / np.sqrt(V.shape[0])
    assert abs(float(beta3(0.5, x0)) - means[0]) < 4 * se + 5e-3


def test_rho_two_points_is_closed_form():
    w = rho_beta_recursion((0.7,), [0.0, 1.3], 10, 9)
    assert w.rho()[0] == pytest.approx(alpha_s2_closed(0.7, [0.0, 1.3]), abs=1e-14)


def test_aleph_field_dimensions():
    assert aleph_field((0.0, 0.0), 4).is_zero
    with pytest.raises(NotImplementedError):
        aleph_field((0.5, 0.5), 4)
    with pytest.raises(ValueError):
        aleph_field((0.5,), 4)
