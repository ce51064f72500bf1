import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wienerou import semigroup
from wienerou.basis import DyadicGrid
from wienerou.ou_field import simulate_ensemble
from wienerou.semigroup import CATALOG, CylindricalFn, get_function
from wienerou.spectrum import SpectrumSpec

SPEC = SpectrumSpec.power(1, 0.25)
ONES = SpectrumSpec.explicit([1.0] * 256)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_partials_match_finite_differences(name):
    CATALOG[name].validate()


def test_validate_catches_wrong_gradient():
    bad = CylindricalFn("bad", 1, lambda s, x: x[..., 0] ** 2,
                        lambda s, x: 3 * x, lambda s, x: np.full(np.shape(x), 2.0))
    with pytest.raises(ValueError, match="d/dx1"):
        bad.validate()


def test_unknown_function_name():
    with pytest.raises(ValueError, match="nope"):
        get_function("nope")


def test_mehler_examples():
    assert semigroup.mehler_expectation(get_function("constant"), [0.0], ONES, 1.0, 1000, 1) \
        == (1.0, 0.0)
    m, se = semigroup.mehler_expectation(get_function("linear"), [1.0], ONES, 1.0, 10**5, 2)
    assert abs(m - math.exp(-1)) < 3 * se
    m, se = semigroup.mehler_expectation(get_function("quadratic"), [0.0], ONES, 1.0, 10**5, 3)
    assert abs(m - (1 - math.exp(-2))) < 3 * se
    assert semigroup.mehler_expectation(get_function("quadratic"), [0.7], ONES, 0.0, 10, 3) \
        == pytest.approx((0.49, 0.0))


def test_pathwise_agrees_with_mehler():
    fns = [get_function(n) for n in ("constant", "linear", "sigmoid_product")]
    paths = semigroup.pathwise_expectations(fns, [1.0, -0.5], ONES, 1.0, 20_000, 4, 6,
                                            DyadicGrid(8))
    assert paths[0] == (1.0, 0.0)
    for F, (pm, ps) in zip(fns[1:], paths[1:]):
        mm, ms = semigroup.mehler_expectation(F, [1.0, -0.5], ONES, 1.0, 20_000, 5)
        assert abs(pm - mm) < 3 * math.hypot(ps, ms)
    assert abs(paths[1][0] - math.exp(-1)) < 4 * paths[1][1]


@pytest.mark.parametrize("F,H,ref", [("linear", "linear", 1.0), ("quadratic", "quadratic", 4.0)])
def test_dirichlet_form_examples(F, H, ref):
    val, mode = semigroup.dirichlet_form(get_function(F), get_function(H), ONES)
    assert mode == "quadrature" and val == pytest.approx(ref, rel=1e-12)


def test_dirichlet_form_disjoint_gradients():
    x1 = get_function("linear")
    x2 = CylindricalFn("x2", 2, lambda s, x: x[..., 1] + 0.0,
                       lambda s, x: np.stack([0 * x[..., 0], 1 + 0 * x[..., 1]], -1),
                       lambda s, x: np.zeros(np.shape(x)))
    assert semigroup.dirichlet_form(x1, x2, SPEC)[0] == pytest.approx(0.0, abs=1e-15)


def test_dirichlet_form_scales_with_lambda():
    spec = SpectrumSpec.explicit([3.0, 3.0])
    assert semigroup.dirichlet_form(get_function("quadratic"), get_function("quadratic"),
                                    spec)[0] == pytest.approx(12.0)


def test_generator_quotient_closed_form_for_linear():
    rows = semigroup.generator_limit_check(get_function("linear"), get_function("linear"),
                                           ONES, [0.4, 0.1, 0.01])
    for r in rows:
        assert r.quotient == pytest.approx((1 - math.exp(-r.t)) / r.t, rel=1e-10)
        assert r.target == pytest.approx(1.0)


def test_generator_constant_is_zero_and_quadratic_converges():
    rows = semigroup.generator_limit_check(get_function("constant"), get_function("quadratic"),
                                           ONES, [0.1])
    assert rows[0].quotient == pytest.approx(0.0, abs=1e-12) and rows[0].target == 0.0
    q = get_function("quadratic")
    rows = semigroup.generator_limit_check(q, q, SPEC, [0.2, 0.1, 0.05, 0.025])
    errs = [r.error for r in rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] / rows[-1].target < 0.05


def _path(rates, init, T, K, seed, N):
    return simulate_ensemble(rates, init, np.linspace(0, T, K + 1), seed, path_ids=np.arange(N))


def test_ito_residual_vanishes_for_linear_function():
    path = _path([1.0], [0.3], 1.0, 256, 1, 50)
    assert np.abs(semigroup.ito_residual(get_function("linear"), path)).max() < 1e-12


def _expected_quadratic_residual(lam, h, K):
    # residual of x**2 is sum (dG)**2 - 2 lam T; zero start gives E G_t**2 = 1 - exp(-2 lam t)
    t = np.arange(K) * h
    e = math.exp(-lam * h)
    return float(np.sum((1 - e) ** 2 * -np.expm1(-2 * lam * t) - np.expm1(-2 * lam * h))
                 - 2 * lam * h * K)


def test_ito_residual_quadratic_identity_mean_and_refinement():
    q = get_function("quadratic")
    fine = _path([1.0], [0.0], 1.0, 2**11, 11, 10_000)
    coarse = fine.subsample(2)
    r_c = semigroup.ito_residual(q, coarse)
    r_f = semigroup.ito_residual(q, fine)
    dG = np.diff(coarse.G[:, :, 0], axis=1)
    np.testing.assert_allclose(r_c, (dG**2).sum(axis=1) - 2.0, atol=1e-12)
    ref = _expected_quadratic_residual(1.0, 2.0**-10, 2**10)
    assert -2e-3 < ref < -1e-3
    assert abs(r_c.mean() - ref) < 3 * r_c.std(ddof=1) / math.sqrt(r_c.size)
    ratio = math.sqrt(np.mean(r_c**2) / np.mean(r_f**2))
    assert 1.1 < ratio < 2.2


def test_ito_residual_time_dependent_function_is_h_times_increment():
    # f = s x1: the left-point sums leave exactly h (G_T - G_0)
    path = _path([1.0], [0.5], 1.0, 512, 2, 5000)
    r = semigroup.ito_residual(get_function("time_linear"), path)
    np.testing.assert_allclose(r, (path.G[:, -1, 0] - path.G[:, 0, 0]) / 512, atol=1e-13)
    assert abs(r.mean()) < 2e-3


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 3))
def test_ito_residual_exact_for_affine_in_x_without_drift_terms(c, lam):
    # f = c x1: the left-point sum telescopes exactly
    F = CylindricalFn("cx", 1, lambda s, x: c * x[..., 0],
                      lambda s, x: np.full(np.shape(x), c), lambda s, x: np.zeros(np.shape(x)))
    path = _path([lam], [1.0], 0.5, 64, 3, 8)
    assert np.abs(semigroup.ito_residual(F, path)).max() < 1e-12


def test_findim_exactness():
    fns = [get_function("sigmoid_product"), get_function("trig_poly")]
    rows = semigroup.findim_exactness_check(fns, [0.5, 1.0], SPEC, 2, [1, 2, 4, 8], 5000, 6)
    vals = {r.n: (r.value, r.se) for r in rows}
    assert vals[2] == vals[4] == vals[8]
    assert vals[1][0] != vals[2][0]


def test_findim_constant_and_linear_examples():
    one = semigroup.findim_exactness_check([get_function("constant")], [0.5], SPEC, 1,
                                           [1, 3], 100, 1)
    assert all(r.value == 1.0 for r in one)
    lin = semigroup.findim_exactness_check([get_function("linear")], [0.7], SPEC, 1, [1, 2, 5],
                                           50_000, 2, initials=[1.5])
    ref = 1.5 * math.exp(-0.7)
    for r in lin:
        assert abs(r.value - ref) < 3 * r.se
