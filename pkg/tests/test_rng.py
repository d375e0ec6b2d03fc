import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arratia_chaos.rng import GridError, SeedLedger, TimeGrid, brownian_batch, make_grid


def test_grid_rejects_bad_input():
    for T, M in [(0.0, 10), (-1.0, 10), (1.0, 0), (1.0, 2.5), (float("nan"), 4)]:
        with pytest.raises(GridError):
            make_grid(T, M)
    with pytest.raises(GridError):
        TimeGrid(1.0, 0)


def test_degenerate_grid():
    g = TimeGrid(0.0, 0)
    assert g.dt == 0.0 and g.index_of(3.0) == 0


@given(st.floats(0.1, 10), st.integers(1, 500), st.floats(0, 1))
def test_index_of_brackets_time(T, M, frac):
    g = make_grid(T, M)
    t = frac * T
    k = g.index_of(t)
    assert g.times[k] <= t + 1e-9 * T
    assert k == M or g.times[k + 1] > t - 1e-9 * T


def test_ledger_roundtrip_and_children():
    L = SeedLedger(5, 2, (1, 3))
    assert SeedLedger.from_dict(L.to_dict()) == L
    assert L.child(4).path == (1, 3, 4)
    with pytest.raises(ValueError):
        SeedLedger(-1)


def test_streams_independent_of_batch_size(grid):
    a = brownian_batch([0.0, 1.0], grid, 3000, SeedLedger(9))
    b = brownian_batch([0.0, 1.0], grid, 5000, SeedLedger(9))
    np.testing.assert_array_equal(a.values, b.values[:3000])


def test_same_seed_same_paths(grid):
    a = brownian_batch([0.0], grid, 50, 1).values
    b = brownian_batch([0.0], grid, 50, 1).values
    c = brownian_batch([0.0], grid, 50, 2).values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_increment_moments(seed):
    g = make_grid(1.0, 64)
    inc = brownian_batch([0.0], g, 4000, seed).increments
    # variance dt per step; 6 sigma on a chi-square mean over 256000 draws
    v = inc.var() / g.dt
    assert abs(v - 1) < 6 * np.sqrt(2 / inc.size)
