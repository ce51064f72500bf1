import math

import numpy as np
from hypothesis import given, settings, strategies as st
from scipy import stats

from wienerou import rng
from wienerou.parallel import accumulate, chunk_ranges, map_paths

SEEDS = st.integers(min_value=0, max_value=2**64 - 1)


def test_same_key_same_million_draws():
    a = rng.rng_stream(7, 3, 11, 10**6)
    b = rng.rng_stream(7, 3, 11, 10**6)
    assert np.array_equal(a, b)


def test_adjacent_keys_uncorrelated():
    a = rng.rng_stream(7, 3, 11, 10**5)
    b = rng.rng_stream(7, 4, 11, 10**5)
    c = rng.rng_stream(7, 3, 12, 10**5)
    bound = 4 / math.sqrt(10**5)
    assert abs(np.corrcoef(a, b)[0, 1]) < bound
    assert abs(np.corrcoef(a, c)[0, 1]) < bound


def test_marginal_ks_below_one_percent_critical_value():
    x = rng.rng_stream(2024, 0, 1, 10**5)
    crit = stats.kstwo.ppf(0.99, x.size)
    assert stats.kstest(x, "norm").statistic < crit


def test_ndtri_matches_scipy():
    p = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 2001), [1e-300, 0.5, 0.975]])
    ours = np.array([rng.ndtri(v) for v in p])
    np.testing.assert_allclose(ours, stats.norm.ppf(p), rtol=1e-13, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(SEEDS, st.integers(0, 2**40), st.integers(0, 2**40), st.integers(0, 500),
       st.integers(1, 200))
def test_window_equals_prefix_slice(seed, pid, stream, start, count):
    full = rng.rng_stream(seed, pid, stream, start + count)
    win = rng.rng_stream(seed, pid, stream, count, start=start)
    assert np.array_equal(full[start:], win)


@settings(max_examples=30, deadline=None)
@given(SEEDS, st.lists(st.integers(0, 2**63), min_size=1, max_size=8, unique=True))
def test_batch_rows_match_single_streams(seed, pids):
    batch = rng.normals(seed, pids, 5, 17)
    for row, pid in zip(batch, pids):
        assert np.array_equal(row, rng.rng_stream(seed, pid, 5, 17))


def test_normal_grid_uses_one_stream_per_coordinate():
    g = rng.normal_grid(9, [0, 1], rng.OU_NOISE, 3, 5)
    for p in range(2):
        for i in range(3):
            ref = rng.rng_stream(9, p, rng.stream_id(rng.OU_NOISE, i), 5)
            assert np.array_equal(g[p, :, i], ref)


def test_uniforms_in_open_unit_interval():
    u = rng.uniforms(1, np.arange(4), 2, 10**4)
    assert u.min() > 0 and u.max() < 1


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 700))
def test_chunks_tile_the_range(n, size):
    ranges = chunk_ranges(n, size)
    assert ranges[0][0] == 0 and ranges[-1][1] == n
    assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))


def test_reductions_independent_of_worker_count():
    def fn(ids):
        x = rng.normals(3, ids, 1, 4)
        return x.sum(axis=0)

    ref = accumulate(fn, 1000, workers=1, chunk_size=64)
    for w in (2, 8):
        assert np.array_equal(accumulate(fn, 1000, workers=w, chunk_size=64), ref)
    rows = map_paths(lambda ids: rng.normals(3, ids, 1, 2), 300, workers=4, chunk_size=32)
    assert np.array_equal(rows, rng.normals(3, np.arange(300), 1, 2))
