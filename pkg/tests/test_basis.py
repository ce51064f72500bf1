import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from wienerou import basis
from wienerou.basis import DyadicGrid, GridField, NormKind


def _enumerate_index(i, d):
    # brute force: walk r, j in order until the global index matches
    count = 0
    r = 0
    while True:
        r += 1
        for j in range(1, d + 1):
            count += 1
            if count == i:
                return r, j


# i = 2*(2**3 + 5 - 1) + 2 = 26 has r - 1 = 12, so r = 2**3 + 5 = 13
@pytest.mark.parametrize("i,d,r,j,m,k", [(1, 1, 1, 1, None, None), (3, 2, 2, 1, 0, 1),
                                         (26, 2, 13, 2, 3, 5)])
def test_decompose_index_examples(i, d, r, j, m, k):
    idx = basis.decompose_index(i, d)
    assert (idx.r, idx.j, idx.level, idx.offset) == (r, j, m, k)
    assert idx.is_root == (r == 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 4))
def test_decompose_matches_enumeration_and_roundtrips(i, d):
    idx = basis.decompose_index(i, d)
    assert (idx.r, idx.j) == _enumerate_index(i, d)
    assert basis.compose_index(idx.r, idx.j, d) == i
    if not idx.is_root:
        assert idx.r == 2**idx.level + idx.offset and 1 <= idx.offset <= 2**idx.level


@pytest.mark.parametrize("r,t,val", [(1, 0.3, 1.0), (2, 0.25, 1.0), (3, 0.3, -math.sqrt(2))])
def test_haar_eval_examples(r, t, val):
    assert basis.haar_eval(r, t) == pytest.approx(val, abs=1e-15)


def test_haar_rejects_outside_unit_interval():
    with pytest.raises(ValueError):
        basis.haar_eval(2, 1.0)


@pytest.mark.parametrize("i,s,val", [(1, 0.7, 0.7), (2, 0.5, 0.5), (3, 0.25, 2**-1.5)])
def test_schauder_examples(i, s, val):
    idx = basis.decompose_index(i, 1)
    assert basis.schauder_eval(idx, s)[0] == pytest.approx(val, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.floats(0, 1))
def test_tent_is_integral_of_haar(r, s):
    # independent oracle: adaptive quadrature of the Haar step function
    m = basis.haar_level(r)
    breaks = [k / 2 ** (m + 1) for k in range(2 ** (m + 1) + 1)] if m >= 0 else None
    val, _ = integrate.quad(lambda t: basis.haar_eval(r, min(t, 1 - 1e-16)), 0, s,
                            points=[b for b in breaks if 0 < b < s] if breaks else None,
                            limit=400, epsabs=1e-13)
    assert float(basis.tent_value(r, s)) == pytest.approx(val, abs=1e-11)


def test_haar_orthonormality_to_machine_precision():
    gram = basis.haar_gram(128)
    assert np.abs(gram - np.eye(128)).max() <= 1e-12


def test_pairing_examples():
    grid = DyadicGrid(8)
    for i in (1, 2, 3, 7, 100):
        idx = basis.decompose_index(i, 1)
        assert basis.schauder_pairing(idx, basis.schauder_field(idx, grid)) == pytest.approx(1, abs=1e-12)
        other = basis.decompose_index(i + 5, 1)
        assert abs(basis.schauder_pairing(idx, basis.schauder_field(other, grid))) < 1e-12
    line = GridField(grid.nodes, grid)
    assert basis.schauder_pairing(basis.decompose_index(2, 1), line) == pytest.approx(0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_coordinate_recovery(d, seed):
    n = d * 128
    grid = DyadicGrid(8)
    c = np.random.default_rng(seed).standard_normal(n)
    vals = basis.synthesize(c, grid, d)
    np.testing.assert_allclose(basis.pair_all(vals, grid, n, d), c, atol=1e-12, rtol=0)
    for i in (1, n // 2, n):
        idx = basis.decompose_index(i, d)
        assert basis.schauder_pairing(idx, GridField(vals, grid)) == pytest.approx(c[i - 1], abs=1e-12)


def test_norm_examples():
    grid = DyadicGrid(8)
    s3 = basis.schauder_field(basis.decompose_index(3, 1), grid)
    assert basis.norm(s3, NormKind.SUP) == pytest.approx(2**-1.5, abs=1e-15)
    s1 = basis.schauder_field(basis.decompose_index(1, 1), grid)
    assert basis.norm(s1, "l1") == pytest.approx(0.5, abs=1e-15)
    g1 = DyadicGrid(1)
    assert basis.norm(GridField(g1.nodes - 0.5, g1), "l1") == pytest.approx(0.25, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_l1_norm_matches_dense_trapezoid(seed):
    grid = DyadicGrid(4)
    v = np.random.default_rng(seed).standard_normal(grid.size)
    dense = np.linspace(0, 1, 2**16 + 1)
    f = np.abs(np.interp(dense, grid.nodes, v))
    ref = integrate.trapezoid(f, dense)
    assert basis.norm(GridField(v, grid), "l1") == pytest.approx(ref, rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.sampled_from(["sup", "l1"]))
def test_closed_form_schauder_norms(i, kind):
    idx = basis.decompose_index(i, 1)
    field = basis.schauder_field(idx, DyadicGrid(10))
    assert basis.norm(field, kind) == pytest.approx(basis.schauder_norm(idx, kind), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_l1_bounded_by_d_times_sup(seed, d):
    grid = DyadicGrid(6)
    v = np.random.default_rng(seed).standard_normal((grid.size, d))
    f = GridField(v, grid)
    assert basis.norm(f, "l1") <= d * basis.norm(f, "sup") + 1e-15


def test_grid_depth_enforced():
    with pytest.raises(basis.GridDepthError):
        basis.schauder_field(basis.decompose_index(300, 1), DyadicGrid(4))
