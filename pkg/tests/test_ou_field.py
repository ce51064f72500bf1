import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wienerou import basis, ou_field
from wienerou.basis import DyadicGrid
from wienerou.spectrum import SpectrumSpec

SPEC = SpectrumSpec.power(1, 0.25)


def test_ou_step_examples():
    assert ou_field.ou_step(1.0, 2.0, 1e6, 0.0) == 0.0
    assert ou_field.ou_step(0.0, 1.0, 0.5, 1.0) == pytest.approx(math.sqrt(1 - math.exp(-1)))
    assert ou_field.ou_step(0.0, 1.0, 0.5, 1.0) == pytest.approx(0.795060, abs=1e-6)
    assert ou_field.ou_step(2.0, 0.5, 1.0, 0.0) == pytest.approx(1.21306, abs=1e-5)
    assert ou_field.ou_step(0.7, 3.0, 0.0, 5.0) == 0.7


def test_repeated_times_leave_coordinates_unchanged():
    p = ou_field.simulate_ensemble(SPEC, 1.0, [0.0, 0.5, 0.5, 1.0], 3, n=4)
    np.testing.assert_array_equal(p.G[0, 1], p.G[0, 2])


def test_marginal_law_of_first_coordinate():
    N = 10**5
    p = ou_field.simulate_ensemble([1.0], [1.0], [0.0, 1.0], 17, path_ids=np.arange(N))
    x = p.G[:, -1, 0]
    sd = math.sqrt(1 - math.exp(-2))
    assert abs(x.mean() - math.exp(-1)) < 3 * sd / math.sqrt(N)
    assert abs(x.var(ddof=1) - sd**2) < 4 * sd**2 * math.sqrt(2 / N)


def test_two_step_composition_matches_one_step_law():
    # composing exact steps must reproduce the one-step transition variance
    N = 50_000
    times = np.linspace(0, 0.6, 7)
    p = ou_field.simulate_ensemble([2.0], [0.5], times, 5, path_ids=np.arange(N))
    x = p.G[:, -1, 0]
    v = 1 - math.exp(-2 * 2.0 * 0.6)
    assert abs(x.mean() - 0.5 * math.exp(-1.2)) < 4 * math.sqrt(v / N)
    assert abs(x.var(ddof=1) - v) < 4 * v * math.sqrt(2 / N)


def test_zero_field_and_linear_field():
    grid = DyadicGrid(5)
    assert np.all(ou_field.synthesize_coeffs(np.zeros(8), grid, 1) == 0)
    c = np.zeros(8)
    c[0] = 2.5
    np.testing.assert_allclose(ou_field.synthesize_coeffs(c, grid, 1)[:, 0], 2.5 * grid.nodes)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**40), st.integers(1, 2))
def test_field_pairing_recovers_coordinates(seed, d):
    p = ou_field.simulate_ensemble(SpectrumSpec.power(1, 0.25, d), "stationary",
                                   [0.0, 0.3], seed, n=128 * d, path_ids=[0, 1])
    grid = DyadicGrid(8)
    for j in range(2):
        vals = p.field(j, grid)
        np.testing.assert_allclose(basis.pair_all(vals, grid, 128 * d, d), p.G[:, j],
                                   atol=1e-12, rtol=0)


def test_y_increment_law():
    N = 10**5
    dY = ou_field.simulate_Y_increments([2.0, 2.0], [0.0, 0.25], 2, 9, path_ids=np.arange(N))
    a, b = dY[:, 0, 0], dY[:, 0, 1]
    assert abs(a.var(ddof=1) - 1.0) < 4 * math.sqrt(2 / N)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(N)
    zero = ou_field.simulate_Y_increments([2.0], [0.0, 0.0], 1, 9)
    assert np.all(zero == 0)


def test_coupled_y_has_martingale_variance_and_correlation():
    # dY = a xi + b xi' with Var = 2 lambda u and corr(dY, xi)^2 = 2 tanh(x/2)/x
    N = 10**5
    lam, u = 1.5, 0.4
    p = ou_field.simulate_ensemble([lam], [0.0], [0.0, u], 4, path_ids=np.arange(N),
                                   with_noise=True)
    dy = p.Y[:, 1, 0]
    assert abs(dy.var(ddof=1) / (2 * lam * u) - 1) < 4 * math.sqrt(2 / N)
    x = lam * u
    rho = math.sqrt(2 * math.tanh(x / 2) / x)
    g = p.G[:, 1, 0] / math.sqrt(-math.expm1(-2 * x))
    assert abs(np.corrcoef(dy, g)[0, 1] - rho) < 4 / math.sqrt(N)


def test_synthesize_A_examples():
    assert np.all(ou_field.synthesize_A([1.0, 2.0], [0.3, 0.4], 0.0) == [0.3, 0.4])
    assert np.all(ou_field.synthesize_A([1.0], [0.0], 2.0) == 0.0)
    assert ou_field.synthesize_A([1.0], [1.0], math.log(2))[0] == pytest.approx(0.5)


def test_decomposition_residual_and_quadrature_gap():
    times = np.linspace(0, 1, 2**10 + 1)
    path = ou_field.simulate_ensemble(SPEC, 0.5, times, 7, n=16, path_ids=np.arange(64),
                                      with_noise=True)
    dec = ou_field.decompose_path(path, 16)
    assert np.all(dec.X - dec.Y - dec.A - dec.Z == 0.0) or \
        np.abs(dec.X - dec.Y - dec.A - dec.Z).max() < 1e-14
    assert np.all(dec.Y[:, 0] == 0) and np.all(dec.Z[:, 0] == 0)
    gaps = []
    for stride in (4, 2, 1):
        sub = path.subsample(stride)
        d = ou_field.decompose_path(sub, 16 // stride)
        gaps.append(np.sqrt(np.mean((d.Z - d.Z_quad) ** 2)))
    assert 1.6 < gaps[0] / gaps[1] < 2.4 and 1.6 < gaps[1] / gaps[2] < 2.4


def test_zero_start_decomposition_is_zero_at_t0():
    path = ou_field.simulate_ensemble(SPEC, "zero", [0.0, 0.5], 1, n=8, with_noise=True)
    dec = ou_field.decompose_path(path, 1)
    assert np.all(dec.Y[:, 0] == 0) and np.all(dec.Z[:, 0] == 0) and np.all(dec.A == 0)


def test_moment_scan_monotone_and_time_homogeneous_when_stationary():
    grid = DyadicGrid(8)
    u = [0.25, 0.125, 0.0625, 0.03125, 0.015625]
    s0 = ou_field.fourth_moment_scan(SPEC, "stationary", 0.0, u, 4000, 3, 6, grid)
    s1 = ou_field.fourth_moment_scan(SPEC, "stationary", 1.0, u, 4000, 4, 6, grid)
    assert np.all(np.diff(s0.mean) > 0)
    z = (s0.mean - s1.mean) / np.hypot(s0.se, s1.se)
    assert np.all(np.abs(z) < 3)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        ou_field.simulate_ensemble(SPEC, 0.0, [0.1, 0.2], 1, n=2)
    with pytest.raises(ValueError):
        ou_field.simulate_ensemble(SPEC, 0.0, [0.0, 0.2, 0.1], 1, n=2)


def test_simulation_is_independent_of_batching():
    times = np.linspace(0, 1, 9)
    full = ou_field.simulate_ensemble(SPEC, "stationary", times, 2, n=16, path_ids=np.arange(10))
    part = ou_field.simulate_ensemble(SPEC, "stationary", times, 2, n=16, path_ids=[3, 7])
    np.testing.assert_array_equal(full.G[[3, 7]], part.G)
