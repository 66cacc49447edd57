import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import logit

from bmdlink.bmd import (
    UnreachableTargetError,
    bmd_closed_form,
    bmd_value,
    compute_bmre,
    estimate_bmd,
)
from bmdlink.dataset import CenteredDesign, DoseResponseDataset, center
from bmdlink.link import Delta, risk

DESIGN = center(DoseResponseDataset.from_arrays([0, 0.25, 0.5, 1.0], [50] * 4, [0] * 4))


def random_delta(rng):
    return Delta(rng.uniform(-5, 0.5), rng.uniform(0.5, 8), rng.uniform(-3, 3), rng.uniform(-3, 3))


def root_oracle(delta, x_min, bmre):
    """Bracketed root of R(x) = bmre, expanding the upper end as needed."""
    f = lambda x: float(risk(delta, x)) - bmre
    hi = x_min + 1.0
    while f(hi) < 0:
        hi = x_min + 2 * (hi - x_min)
        if hi > 1e8:
            return None
    return brentq(f, x_min, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


class TestComputeBmre:
    def test_zero_background(self):
        assert compute_bmre(0.0, 0.1)[0] == 0.1

    def test_formula(self):
        assert compute_bmre(0.05, 0.1)[0] == pytest.approx(0.145, abs=1e-15)

    def test_logit_symmetry(self):
        bmre, lbmr = compute_bmre(0.375, 0.2)
        assert bmre == 0.5 and lbmr == 0.0

    def test_logit_precision(self, rng):
        for p0, bmr in rng.uniform(0, 0.9, size=(100, 2)):
            bmre, lbmr = compute_bmre(p0, bmr)
            assert p0 < bmre < 1
            assert lbmr == pytest.approx(math.log(bmre / (1 - bmre)), abs=1e-14)

    @pytest.mark.parametrize("p0,bmr", [(1.0, 0.1), (-0.1, 0.1), (0.1, 0.0), (0.1, 1.0)])
    def test_rejects(self, p0, bmr):
        with pytest.raises(ValueError):
            compute_bmre(p0, bmr)


class TestClosedForm:
    def test_logistic_middle_case(self):
        x, branch = bmd_closed_form(Delta(-2.0, 1.0), 0.0)
        assert x == 2.0 and branch == "S1_zero"

    def test_odd_symmetry(self):
        # (lbmr - b0) / b1: negating b1 flips the sign, negating both numerator and b1 does not
        x, _ = bmd_closed_form(Delta(-2.0, 1.5), 0.7)
        assert bmd_closed_form(Delta(-2.0, -1.5), 0.7)[0] == pytest.approx(-x, rel=1e-15)
        assert bmd_closed_form(Delta(2.0, -1.5), -0.7)[0] == pytest.approx(x, rel=1e-15)

    def test_positive_alpha_formula(self):
        b0, b1, a1, lbmr = -1.0, 2.0, 0.8, 0.5
        x, branch = bmd_closed_form(Delta(b0, b1, a1, 0.0), lbmr)
        assert branch == "S1_pos"
        assert x == pytest.approx(math.log(a1 * (lbmr - b0) + 1) / (a1 * b1), rel=1e-14)

    def test_lower_branch(self):
        x, branch = bmd_closed_form(Delta(0.0, 1.0, 0.0, -0.5), -1.0)
        assert branch == "S2_neg" and x < 0

    def test_overflow_unreachable(self):
        # alpha1 < 0 grows only logarithmically: the target sits far beyond float range
        with pytest.raises(UnreachableTargetError):
            bmd_closed_form(Delta(-5.0, 1.0, -8.0, 0.0), 700.0)

    def test_flat_curve(self):
        with pytest.raises(UnreachableTargetError):
            bmd_closed_form(Delta(-1.0, 0.0), 0.0)

    def test_seam(self):
        d = Delta(-1.0, 2.0, 1.5, -2.5)
        for eps in (1e-12, 1e-9):
            up, _ = bmd_closed_form(d, -1.0 + eps)
            dn, _ = bmd_closed_form(d, -1.0 - eps)
            assert abs(up) <= 1e-8 and abs(dn) <= 1e-8
            assert up > 0 > dn

    def test_series_window_matches_exact(self):
        d0 = Delta(-1.0, 2.0, 1e-7, 1e-7)
        x, _ = bmd_closed_form(d0, 0.5)
        assert x == pytest.approx(math.log1p(1e-7 * 1.5) / (1e-7 * 2.0), rel=1e-12)


class TestInverseProperty:
    def test_scenario1(self):
        d = Delta(-4.5031, 4.9075, 0.1170, 1.5162)
        p0 = float(risk(d, DESIGN.x_min))
        bmre, lbmr = compute_bmre(p0, 0.1)
        x, _ = bmd_closed_form(d, lbmr)
        assert float(risk(d, x)) == pytest.approx(bmre, abs=1e-8)
        assert x == pytest.approx(root_oracle(d, DESIGN.x_min, bmre), abs=1e-8)

    def test_random_against_root_finding(self, rng):
        checked = 0
        for _ in range(300):
            d = random_delta(rng)
            bmr = rng.choice([0.01, 0.05, 0.1])
            p0 = float(risk(d, DESIGN.x_min))
            bmre, lbmr = compute_bmre(p0, bmr)
            try:
                x, _ = bmd_closed_form(d, lbmr)
            except UnreachableTargetError:
                assert root_oracle(d, DESIGN.x_min, bmre) is None
                continue
            assert abs(float(risk(d, x)) - bmre) <= 1e-8
            ref = root_oracle(d, DESIGN.x_min, bmre)
            assert abs(x - ref) <= 1e-8 * max(1.0, abs(ref))
            checked += 1
        assert checked > 250


class TestEstimateBmd:
    def test_bmr_monotone(self, rng):
        for _ in range(50):
            d = random_delta(rng)
            vals = [bmd_value(d, DESIGN, b) for b in (0.01, 0.05, 0.1, 0.2)]
            finite = [v for v in vals if math.isfinite(v)]
            assert np.all(np.diff(finite) > 0)

    def test_identity_transform(self):
        design = CenteredDesign(np.array([-1.0, 0.0, 1.0]), 0.0, 1.0, np.array([-1.0, 0.0, 1.0]))
        res = estimate_bmd(Delta(-1.0, 1.5, 0.3, -0.2), design, 0.1)
        assert res.bmd == res.bmd_centered

    def test_scale_equivariance(self):
        data = DoseResponseDataset.from_arrays([0, 62.5, 125, 250], [50] * 4, [1, 9, 8, 14])
        raw, norm = center(data), center(data, normalize=True)
        d_raw = Delta(-1.5, 0.004, 0.4, 0.3)
        # same curve in original dose units, expressed on the normalized scale
        d_norm = Delta(-1.5, 0.004 * norm.scale, 0.4, 0.3)
        a, b = estimate_bmd(d_raw, raw, 0.1), estimate_bmd(d_norm, norm, 0.1)
        assert b.bmd_centered == pytest.approx(a.bmd_centered / norm.scale, rel=1e-12)
        assert b.bmd == pytest.approx(a.bmd, rel=1e-12)

    def test_background_is_fitted_risk(self):
        d = Delta(-2.0, 3.0, 0.5, 0.5)
        res = estimate_bmd(d, DESIGN, 0.1)
        assert res.p0 == pytest.approx(float(risk(d, DESIGN.x_min)), rel=1e-15)
        assert res.lbmr == pytest.approx(logit(res.bmre), abs=1e-14)

    def test_extrapolation_flag(self):
        assert not estimate_bmd(Delta(0.0, 4.0), DESIGN, 0.1).extrapolated
        assert estimate_bmd(Delta(-4.0, 0.5), DESIGN, 0.1).extrapolated

    def test_bmd_value_non_increasing(self):
        assert bmd_value(Delta(-1.0, -2.0), DESIGN, 0.1) == math.inf

    def test_bromopropane(self, bromo_fit, bromo_design):
        for bmr in (0.01, 0.1):
            res = estimate_bmd(bromo_fit, bromo_design, bmr)
            assert math.isfinite(res.bmd) and 0 < res.bmd < 250
            x = bromo_design.to_centered(res.bmd)
            assert float(risk(bromo_fit.delta_hat, x)) == pytest.approx(res.bmre, abs=1e-8)
