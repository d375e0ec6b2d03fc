import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import erf

from arratia_chaos.flow import (read_paths, sample_levels, simulate_batch, simulate_npoint, split_at_collision,
                                write_paths)
from arratia_chaos.rng import SeedLedger, make_grid


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(0.05, 1.5), min_size=1, max_size=4), st.integers(0, 10**6))
def test_order_kept_and_merged_stay_merged(gaps, seed):
    u = np.cumsum([0.0, *gaps])
    mb = simulate_batch(u, make_grid(1.0, 128), 40, seed)
    x = mb.values
    assert np.all(np.diff(x, axis=1) >= 0)
    # once two neighbours meet they move together
    met = np.maximum.accumulate(np.diff(x, axis=1) == 0, axis=2)
    assert np.all(np.diff(x, axis=1)[met] == 0)


def test_single_particle_never_collides():
    mb = simulate_batch([0.3], make_grid(1.0, 32), 20, 1)
    assert np.all(np.isinf(mb.tau))


def test_first_passage_law_two_points():
    u, T = [0.0, 1.0], 1.0
    mb = simulate_batch(u, make_grid(T, 512), 20000, 2)
    tau = mb.tau
    FT = 1 - erf(1 / (2 * np.sqrt(T)))
    p = np.isfinite(tau).mean()
    assert abs(p - FT) < 4 * np.sqrt(FT * (1 - FT) / tau.size)
    t = tau[np.isfinite(tau)]
    F = lambda s: (1 - erf(1 / (2 * np.sqrt(s)))) / FT
    assert stats.kstest(t, F).pvalue > 1e-3


def test_split_at_collision_reduces_dimension():
    m = simulate_npoint([0.0, 0.1, 3.0], make_grid(2.0, 256), 3)
    tau, start, pair = m.first_collision
    assert np.isfinite(tau) and pair == 0
    before, after = split_at_collision(m)
    assert after.n == 2 and after.values[0, 0] == pytest.approx(start[0])


def test_levels_chain_shapes():
    lb = sample_levels([0.0, 0.5, 1.0], make_grid(1.0, 64), 300, 4)
    assert set(lb.levels) == {1, 2, 3}
    l3, l2 = lb.level(3), lb.level(2)
    np.testing.assert_array_equal(l2.start, l3.exit_pos)
    assert np.all(np.diff(l2.start, axis=1) > 0)


def test_path_dump_roundtrip():
    mb = simulate_batch([0.0, 1.0], make_grid(1.0, 16), 5, 6)
    buf = io.BytesIO()
    write_paths(buf, mb.values, 1.0, SeedLedger(6, 2))
    buf.seek(0)
    vals, hdr = read_paths(buf)
    np.testing.assert_array_equal(vals, mb.values)
    assert hdr["seed"] == 6 and hdr["stream"] == 2 and hdr["M"] == 16
    with pytest.raises(ValueError):
        read_paths(io.BytesIO(b"garbage!"))
