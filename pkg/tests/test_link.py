import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from bmdlink.link import (
    G_MAX,
    NAMED_LINKS,
    Delta,
    evaluate,
    generating_family,
    generating_family_slope,
    inverse_branch,
    link_terms,
    risk,
    risk_gradient,
)

mp.mp.dps = 40

SCENARIO1 = Delta(-4.5031, 4.9075, 0.1170, 1.5162)
SCENARIO2 = Delta(-2.9252, 4.9961, 1.9078, -1.1403)


def g_oracle(b0, a1, a2, eta_c):
    """Piecewise closed forms in extended precision, lower branch written out directly."""
    z = abs(mp.mpf(a1 if eta_c >= 0 else a2) * mp.mpf(eta_c))
    extra = 0 if z == 0 else max(0, int(-mp.log10(z)))
    with mp.workdps(40 + extra):
        return _g_oracle(b0, a1, a2, eta_c)


def _g_oracle(b0, a1, a2, eta_c):
    b0, a1, a2, e = (mp.mpf(v) for v in (b0, a1, a2, eta_c))
    if e >= 0:
        if a1 > 0:
            v = (mp.exp(a1 * e) - 1) / a1
        elif a1 == 0:
            v = e
        else:
            v = -mp.log(1 - a1 * e) / a1
    else:
        if a2 > 0:
            v = (1 - mp.exp(-a2 * e)) / a2
        elif a2 == 0:
            v = e
        else:
            v = mp.log(1 + a2 * e) / a2
    return b0 + v


class TestGeneratingFamily:
    def test_logistic_case(self):
        assert generating_family(Delta(-1.0, 1.0), 2.0) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("a1,a2", [(0, 0), (3, -2), (-7, 7), (1e-9, -1e-9)])
    def test_standardization_point(self, a1, a2):
        assert generating_family(Delta(0.37, 2.0, a1, a2), 0.0) == 0.37

    def test_scenario1_point(self):
        eta_c = 4.9075 * 0.0625
        assert generating_family(SCENARIO1, eta_c) == pytest.approx(-4.1909, abs=1e-4)
        assert risk(SCENARIO1, 0.0625) == pytest.approx(0.0149, abs=5e-5)

    @settings(max_examples=300, deadline=None)
    @given(
        st.floats(-8, 8), st.floats(-8, 8), st.floats(-5, 5),
        st.one_of(st.floats(-3, 3), st.floats(-1e-3, 1e-3)),
    )
    def test_against_high_precision_oracle(self, a1, a2, b0, eta_c):
        ref = float(g_oracle(b0, a1, a2, eta_c))
        if abs(ref) >= G_MAX:
            return
        got = generating_family(Delta(b0, 1.0, a1, a2), eta_c)
        assert got == pytest.approx(ref, rel=1e-13, abs=1e-13)

    @pytest.mark.parametrize("z", [9.9e-4, 1.01e-3, 1e-6, -9.9e-4, -1.01e-3])
    def test_series_window_edges(self, z):
        # both sides of the series switch agree with the oracle to near machine precision
        for eta in (0.5, -0.5):
            a = z / abs(eta)
            ref = float(g_oracle(0.0, a, a, eta))
            assert generating_family(Delta(0.0, 1.0, a, a), eta) == pytest.approx(ref, rel=1e-14)

    def test_continuity_in_alpha(self):
        for eta in np.linspace(-20, 20, 81):
            g0 = generating_family(Delta(0.0, 1.0, 0.0, 0.0), eta)
            for a in (1e-7, -1e-7):
                g = generating_family(Delta(0.0, 1.0, a, a), eta)
                assert abs(g - g0) <= 1e-6 * (1 + eta * eta)

    def test_negative_alpha_has_no_asymptote(self):
        # -log(1 - a v) / a with a < 0 grows like log(v), so every logit is reachable
        d = Delta(0.0, 1.0, -8.0, -8.0)
        g = generating_family(d, np.array([-1e6, 1e6]))
        assert g[0] < -1.5 and g[1] > 1.5 and np.all(np.isfinite(g))

    @pytest.mark.parametrize("a1,a2", [(0, 0), (8, 8), (-8, -8), (2, -1), (-1, 2), (0.165, 0.165)])
    def test_monotone_in_eta(self, a1, a2):
        eta = np.linspace(-1, 1, 2001)
        g = generating_family(Delta(0.0, 1.0, a1, a2), eta)
        assert np.all(np.diff(g) > 0)

    @pytest.mark.parametrize("a1,a2", [(0, 0), (3, -2), (-4, 5), (1e-6, 2)])
    def test_seam_continuity(self, a1, a2):
        d = Delta(0.2, 1.0, a1, a2)
        h = 1e-12
        assert abs(generating_family(d, h) - generating_family(d, -h)) <= 1e-10
        assert abs(generating_family_slope(d, h) - generating_family_slope(d, -h)) <= 1e-10

    def test_slope_matches_finite_difference(self):
        d = Delta(0.0, 1.0, 1.3, -0.7)
        for eta in (-0.9, -0.1, 0.3, 1.7):
            h = 1e-6
            fd = (generating_family(d, eta + h) - generating_family(d, eta - h)) / (2 * h)
            assert generating_family_slope(d, eta) == pytest.approx(fd, rel=1e-7)

    def test_saturation_no_nan(self):
        d = Delta(0.0, 1.0, 8.0, 8.0)
        out = evaluate(d, 200.0)
        assert out.saturated and out.g_value == G_MAX and out.risk == 1.0
        low = evaluate(Delta(0.0, 1.0, 0.0, 8.0), -200.0)
        assert low.saturated and low.g_value == -G_MAX and low.risk == pytest.approx(0.0, abs=1e-300)
        terms = link_terms([0, 1, 8, 8], np.array([200.0, 0.5]))
        assert np.all(np.isfinite(terms.g)) and np.all(terms.dg[0] == 0)


class TestRisk:
    def test_table3_cells(self):
        assert risk(SCENARIO1, -0.1875) == pytest.approx(0.0015, abs=5e-5)
        assert risk(SCENARIO2, -0.4375) == pytest.approx(0.0176, abs=5e-5)

    def test_logistic_midpoint(self):
        b0, b1 = -1.3, 2.6
        assert risk(Delta(b0, b1), -b0 / b1) == pytest.approx(0.5, abs=1e-15)

    def test_sigmoid_identity(self):
        out = evaluate(SCENARIO2, 0.3)
        assert out.risk == pytest.approx(math.exp(out.g_value) / (1 + math.exp(out.g_value)), rel=1e-14)

    def test_standardization_value_random_alpha(self, rng):
        b0 = -0.8
        for a1, a2 in rng.uniform(-5, 5, size=(1000, 2)):
            assert risk(Delta(b0, 3.0, a1, a2), 0.0) == expit(b0)

    def test_standardization_slope_random_alpha(self, rng):
        b0 = 0.4
        target = expit(b0) * (1 - expit(b0))
        h = 1e-6
        for a1, a2 in rng.uniform(-5, 5, size=(200, 2)):
            d = Delta(b0, 1.0, a1, a2)
            fd = (risk(d, h) - risk(d, -h)) / (2 * h)
            assert fd == pytest.approx(target, abs=1e-6)


class TestGradient:
    def test_zero_at_standardization_point(self):
        g = risk_gradient(Delta(0.1, 2.0, 1.5, -2.0), 0.0)
        assert g[2] == 0 and g[3] == 0

    def test_logistic_identity(self):
        d = Delta(-0.5, 1.7)
        for x in (-1.0, 0.2, 0.9):
            r = risk(d, x)
            assert risk_gradient(d, x)[1] == pytest.approx(x * r * (1 - r), rel=1e-14)

    def test_branch_exclusivity(self):
        d = Delta(0.0, 1.0, 0.7, -0.4)
        assert risk_gradient(d, 0.5)[3] == 0
        assert risk_gradient(d, -0.5)[2] == 0

    def test_finite_difference(self, rng):
        for _ in range(200):
            p = np.array([rng.uniform(-3, 3), rng.uniform(0.2, 4), rng.uniform(-3, 3), rng.uniform(-3, 3)])
            x = rng.uniform(-1, 1)
            g = risk_gradient(Delta.from_array(p), x)
            for k in range(4):
                h = 1e-5 * (1 + abs(p[k]))
                up, dn = p.copy(), p.copy()
                up[k] += h
                dn[k] -= h
                fd = (risk(Delta.from_array(up), x) - risk(Delta.from_array(dn), x)) / (2 * h)
                assert g[k] == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_saturated_rows_are_zero(self):
        g = risk_gradient(Delta(0.0, 1.0, 8.0, 8.0), np.array([200.0]))
        np.testing.assert_array_equal(g, 0.0)


class TestMisc:
    def test_branch_names(self):
        assert evaluate(Delta(0, 1, 1, -1), 0.3).branch == "upper_pos"
        assert evaluate(Delta(0, 1, 1, -1), -0.3).branch == "lower_neg"
        assert evaluate(Delta(0, 1, 0, 0), 0.0).branch == "upper_zero"

    def test_delta_finite(self):
        with pytest.raises(ValueError):
            Delta(float("nan"), 1.0)

    def test_named_links_documented(self):
        assert NAMED_LINKS["logistic"] == (0.0, 0.0)

    @pytest.mark.parametrize("a", [-3.0, -1e-6, 0.0, 1e-6, 2.5])
    def test_inverse_branch(self, a):
        for t in (0.0, 1e-5, 0.3, 2.0):
            v = inverse_branch(a, t)
            assert generating_family(Delta(0.0, 1.0, a, a), v) == pytest.approx(t, rel=1e-13, abs=1e-16)
        with pytest.raises(ValueError):
            inverse_branch(a, -1.0)
