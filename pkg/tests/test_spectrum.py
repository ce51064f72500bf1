import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wienerou import spectrum
from wienerou.spectrum import SpectrumSpec, Verdict


def test_lambda_examples():
    assert SpectrumSpec.power(1, 0.4).lambda_at(32) == pytest.approx(32**0.4)
    assert SpectrumSpec.power(1, 0.4).lambda_at(32) == pytest.approx(4.0, abs=5e-3)
    assert SpectrumSpec.log(2, 1).lambda_at(1) == pytest.approx(2 * math.log(2))
    assert SpectrumSpec.explicit([1, 1, 2]).lambda_at(2) == 1.0


def test_explicit_out_of_range_and_invalid():
    with pytest.raises(IndexError):
        SpectrumSpec.explicit([1, 2]).lambdas(3)
    with pytest.raises(ValueError):
        SpectrumSpec.explicit([2, 1])
    with pytest.raises(ValueError):
        SpectrumSpec.explicit([0, 1])
    with pytest.raises(ValueError):
        SpectrumSpec.power(-1, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.floats(0, 2), st.integers(1, 3))
def test_power_law_nondecreasing_and_roundtrip(a, alpha, d):
    spec = SpectrumSpec.power(a, alpha, d)
    lam = spec.lambdas(500)
    assert np.all(np.diff(lam) >= 0) and lam[0] > 0
    assert SpectrumSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("spec,verdict", [
    (SpectrumSpec.power(1, 0.5), Verdict.CONVERGES),
    (SpectrumSpec.power(1, 1.0), Verdict.DIVERGES),
    (SpectrumSpec.log(1, 2, d=2), Verdict.CONVERGES),
])
def test_closability_examples(spec, verdict):
    rep = spectrum.check_closability(spec, 20)
    assert rep.verdict is verdict


def test_diverging_closability_terms_are_constant():
    rep = spectrum.check_closability(SpectrumSpec.power(1, 1.0), 12)
    np.testing.assert_allclose(rep.terms, 1.0)


@pytest.mark.parametrize("alpha,verdict", [(0.25, Verdict.CONVERGES), (0.75, Verdict.DIVERGES)])
def test_approx_condition_power_examples(alpha, verdict):
    rep = spectrum.check_approx_condition(SpectrumSpec.power(1, alpha), None, 16)
    assert rep.verdict is verdict


def test_qv_condition_examples():
    assert spectrum.check_qv_condition(SpectrumSpec.power(1, 0.25), None, 16).verdict \
        is Verdict.CONVERGES
    rep = spectrum.check_qv_condition(SpectrumSpec.power(1, 0.5), None, 16)
    assert rep.verdict is Verdict.DIVERGES
    # terms grow like sqrt(m)
    m = np.arange(17)
    np.testing.assert_allclose(rep.terms, math.sqrt(2) * np.sqrt(m), rtol=1e-12)


def test_explicit_constant_spectrum_converges_numerically():
    # explicit lists get no analytic classification; the tail test must accept them
    spec = SpectrumSpec.explicit([1.0] * 2**13)
    rep = spectrum.check_approx_condition(spec, np.ones(2**13), 11)
    assert rep.converges
    assert rep.verdict is Verdict.PLAUSIBLE
    m = np.arange(12)
    np.testing.assert_allclose(rep.terms, 2.0 ** (-m / 2) * (1 + np.sqrt(m)))
    full = sum(2.0 ** (-k / 2) * (1 + math.sqrt(k)) for k in range(400))
    assert rep.partial_sums[-1] + rep.tail_estimate == pytest.approx(full, rel=0.05)


def test_log_law_bounded_initials_converges():
    spec = SpectrumSpec.log(1, 1)
    rep = spectrum.check_approx_condition(spec, np.ones(2**17), 16)
    assert rep.verdict is Verdict.CONVERGES


def test_check_all_default_spectrum_and_nesting():
    reports, nested = spectrum.check_all(SpectrumSpec.power(1, 0.25), None, 16)
    assert all(r.verdict is Verdict.CONVERGES for r in reports.values())
    assert nested


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 1.5), st.integers(4, 14))
def test_nesting_holds_for_power_laws(alpha, M):
    reports, nested = spectrum.check_all(SpectrumSpec.power(1, alpha), None, M)
    assert nested
    if reports["qv"].converges:
        assert reports["approx"].converges and reports["closability"].converges


def test_partial_sums_are_cumulative():
    rep = spectrum.check_closability(SpectrumSpec.log(1, 1), 10)
    np.testing.assert_allclose(rep.partial_sums, np.cumsum(rep.terms))


def test_short_initials_rejected():
    with pytest.raises(ValueError):
        spectrum.check_qv_condition(SpectrumSpec.power(1, 0.25), np.zeros(10), 8)
