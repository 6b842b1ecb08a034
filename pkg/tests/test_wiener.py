import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wienerlab.capacity import CapacityProfile
from wienerlab.wiener import (AdmissibilityError, classify, cumulative_integrals, modulus,
                              modulus_and_reference, optimal_r, qo_exponent, wiener_integral)


def dyadic(deltas, rho_ref=1.0):
    scales = [rho_ref * 0.5 ** (j + 1) for j in range(len(deltas))]
    return CapacityProfile.from_deltas(scales, deltas, 0.5, rho_ref)


# ---- q_o arithmetic

def test_qo_prototype_values():
    par = qo_exponent(4 / 3, 2, r=2)
    # lambda_r = 2(4/3 - 2) + 8/3 = 4/3 ; d = 1 + (4/3)/((8/3)(2/3)) = 1.75 ;
    # q_o = 3 (1 + 1.75 (4/3)(1)/(4/3)) = 8.25
    assert par.lambda_r == pytest.approx(4 / 3, abs=1e-12)
    assert par.d == pytest.approx(1.75, abs=1e-12)
    assert par.q_o == pytest.approx(8.25, abs=1e-12)


def test_qo_user_d_zero():
    par = qo_exponent(1.2, 2, r=3, d_mode="user", d=0.0)
    assert par.q_o == pytest.approx(1 / 0.2, rel=1e-14)


def test_qo_rejects_zero_lambda():
    with pytest.raises(AdmissibilityError):
        qo_exponent(4 / 3, 2, r=1)


def test_qo_rejects_supercritical_p():
    with pytest.raises(AdmissibilityError):
        qo_exponent(1.5, 2, r=2)


def test_optimal_r_not_worse_than_r2():
    r = optimal_r(4 / 3, 2)
    assert qo_exponent(4 / 3, 2, r).q_o <= qo_exponent(4 / 3, 2, 2.0).q_o
    assert qo_exponent(4 / 3, 2).r == pytest.approx(r)


# ---- quadrature

def test_zero_profile():
    prof = dyadic([0.0] * 4)
    assert wiener_integral(prof, 8.25, prof.normalized_scales()[-1]) == 0.0
    assert modulus(prof, 8.25, 0.1) == 1.0


def test_constant_unit_profile_at_inverse_e():
    prof = dyadic([1.0, 1.0])
    assert wiener_integral(prof, 3.0, math.exp(-1)) == pytest.approx(1.0, rel=1e-14)


def test_constant_profile_logarithmic():
    d0, q = 0.4, 2.5
    prof = dyadic([d0] * 5)
    tau = 0.05
    assert wiener_integral(prof, q, tau) == pytest.approx(d0 ** q * math.log(1 / tau), rel=1e-13)


def test_two_level_profile_exact():
    # delta = 0.8 on [1/2, 1) and [1/4, 1/2); 0.3 on [1/8, 1/4) and [1/16, 1/8)
    prof = dyadic([0.8, 0.8, 0.3, 0.3])
    q = 2.0
    expected = 0.8 ** 2 * 2 * math.log(2) + 0.3 ** 2 * 2 * math.log(2)
    got = wiener_integral(prof, q, 1 / 16)
    assert abs(got / expected - 1) < 1e-12


@settings(max_examples=60, deadline=None)
@given(deltas=st.lists(st.floats(0, 1), min_size=3, max_size=12), q=st.floats(0.5, 12))
def test_piecewise_exactness_and_monotonicity(deltas, q):
    prof = dyadic(deltas)
    s = prof.normalized_scales()
    expected = 0.0
    values = []
    for j, dj in enumerate(deltas):
        expected += dj ** q * math.log(2) if dj > 0 else 0.0
        values.append(wiener_integral(prof, q, float(s[j])))
        if expected > 0:
            assert abs(values[-1] / expected - 1) < 1e-12
        else:
            assert values[-1] == 0.0
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_rejects_tau_below_profile():
    prof = dyadic([0.5] * 3)
    with pytest.raises(ValueError):
        wiener_integral(prof, 2.0, 0.01)


def test_rejects_gap():
    prof = dyadic([0.5, float("nan"), 0.5])
    with pytest.raises(ValueError):
        wiener_integral(prof, 2.0, 0.125)


# ---- classification

def test_constant_profile_is_pfat_with_power_modulus():
    d0, q = 0.37, 8.25
    prof = dyadic([d0] * 6)
    assert classify(prof, q) == "p-fat"
    for s in prof.normalized_scales():
        assert modulus(prof, q, float(s)) == pytest.approx(s ** (d0 ** q), rel=1e-12)


def test_empty_complement_inconclusive():
    prof = dyadic([0.0] * 6)
    assert classify(prof, 8.25) == "inconclusive"
    rep = modulus_and_reference(prof, 8.25)
    assert rep.moduli == [1.0] * 6


def test_shrinking_spike_ln_ln_growth():
    n = 24
    prof = dyadic([1 / (j + 1) for j in range(n)])
    s = prof.normalized_scales()
    # integral over the first k pieces equals sum_{j<=k} j^{-q} ln 2
    for q in (1.0, 8.25):
        partial = np.cumsum([(1 / (j + 1)) ** q * math.log(2) for j in range(n)])
        got = cumulative_integrals(prof, q)
        assert np.allclose(got, partial, rtol=1e-12, atol=0)
    # q = 1: harmonic partial sums grow like ln ln(1/rho)
    ll = np.log(np.log(1 / s) / math.log(2))
    slope = np.polyfit(ll[n // 2:], cumulative_integrals(prof, 1.0)[n // 2:], 1)[0]
    assert slope == pytest.approx(math.log(2), rel=0.05)
    assert classify(prof, 1.0) == "wiener-point"
    assert classify(prof, 8.25) == "wiener-point"


def test_report_columns(tmp_path):
    prof = dyadic([0.5, 0.4, 0.3, 0.2])
    rep = modulus_and_reference(prof, 2.0, alpha=0.5)
    head = rep.to_csv(tmp_path / "w.csv").read_text().splitlines()[0]
    assert head == "scale,delta,integral,modulus,r_tilde"
    assert all(0 < r <= 1 for r in rep.r_tilde)
    assert all(b <= a for a, b in zip(rep.moduli, rep.moduli[1:]))
