import csv
import math
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma, rgamma

from volterra.errors import DomainError, RegimeError
from volterra.special_functions import (
    DEFAULT_ACCURACY,
    OSCILLATION_BOUND,
    MLAccuracy,
    MLParams,
    ml_asymptotic,
    ml_contour,
    ml_eval,
    ml_oracle,
    ml_oracle_hankel,
    ml_series,
)

FIXTURES = Path(__file__).parent / "fixtures"

# Values produced once by ml_oracle (series in extended precision) and frozen.
E175_M10 = -0.453921101080138765317457987934
E12_2_M4PI2 = 0.0219368531869613642585643150319
E12_M5 = -0.07296017630575920174711


def load_reference():
    with open(FIXTURES / "ml_reference.csv") as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["a"]), float(r["b"]), float(r["x"]), float(r["value"])) for r in rows]


class TestParams:
    def test_rejects_bad_a(self):
        for a in (0.0, -1.0, 2.5, float("nan")):
            with pytest.raises(DomainError):
                MLParams(a, 1.0)

    def test_rejects_small_b(self):
        with pytest.raises(DomainError):
            MLParams(1.5, 0.5)

    def test_accuracy_thresholds(self):
        with pytest.raises(DomainError):
            MLAccuracy(regime_thresholds=(10.0, 5.0))
        rs, ra = DEFAULT_ACCURACY.thresholds(1.5)
        assert 0 < rs < ra


class TestExamples:
    def test_trivial_values(self):
        assert ml_eval(MLParams(1, 1), 0.0) == 1.0
        assert ml_eval(MLParams(1, 1), -1.0) == pytest.approx(0.367879441171442, rel=1e-14)
        assert ml_eval(MLParams(1.5, 1), 0.0) == 1.0

    def test_oracle_values(self):
        assert ml_eval(MLParams(1.75, 1), -10.0) == pytest.approx(E175_M10, rel=1e-13)
        x = -4 * math.pi**2
        assert ml_eval(MLParams(1.2, 2), x) == pytest.approx(E12_2_M4PI2, rel=1e-13)
        assert ml_eval(MLParams(1.2, 1), -5.0) == pytest.approx(E12_M5, rel=1e-13)

    def test_oracle_examples(self):
        v = ml_oracle(MLParams(1, 1), -1.0, 30)
        with mp.workdps(40):
            assert abs(v - mp.exp(-1)) < mp.mpf(10) ** -30
            assert abs(v - mp.mpf("0.367879441171442321595523770161")) < mp.mpf(10) ** -29
        assert ml_oracle(MLParams(1.5, 1), 0.0, 30) == 1
        v = ml_oracle(MLParams(1.2, 1), -5.0, 20)
        assert abs(float(v) - E12_M5) < 1e-18

    def test_oracle_domain(self):
        with pytest.raises(DomainError):
            ml_oracle(MLParams(1.2, 1), -250.0, 20)

    def test_asymptotic_leading_term(self):
        x = -1e8
        lead = -(1 / x) / gamma(1 - 1.5)
        one = ml_asymptotic(MLParams(1.5, 1), x, terms=1)
        assert one == pytest.approx(lead, rel=1e-15)
        assert ml_asymptotic(MLParams(1.5, 1), x) == pytest.approx(lead, rel=1e-7)

    def test_asymptotic_vs_contour(self):
        p = MLParams(1.2, 2)
        a = ml_asymptotic(p, -1e6)
        c = ml_contour(p, -1e6)
        assert abs(a - c) <= 1e-11 * abs(c)

    def test_asymptotic_refuses_a1(self):
        with pytest.raises(RegimeError):
            ml_asymptotic(MLParams(1, 1), -50.0)
        assert ml_eval(MLParams(1, 1), -50.0) == pytest.approx(math.exp(-50), rel=1e-14)

    def test_asymptotic_refuses_small_x(self):
        with pytest.raises(RegimeError):
            ml_asymptotic(MLParams(1.5, 1), -10.0)

    def test_domain_errors(self):
        p = MLParams(1.5, 1)
        with pytest.raises(DomainError):
            ml_eval(p, 0.5)
        with pytest.raises(DomainError):
            ml_eval(p, np.array([-1.0, 1.0]))
        with pytest.raises(DomainError):
            ml_eval(p, -1.0 + 0.5j)
        with pytest.raises(DomainError):
            ml_eval(p, float("nan"))

    def test_array_shape_preserved(self):
        x = -np.linspace(0, 300, 12).reshape(3, 4)
        out = ml_eval(MLParams(1.5, 2), x)
        assert out.shape == (3, 4)
        np.testing.assert_allclose(out[1, 2], ml_eval(MLParams(1.5, 2), x[1, 2]), rtol=1e-15)


class TestAgainstReference:
    def test_fixture(self):
        rows = load_reference()
        assert len(rows) == 500
        worst = 0.0
        for a, b, x, ref in rows:
            v = ml_eval(MLParams(a, b), x)
            worst = max(worst, abs(v - ref) / abs(ref))
        assert worst <= 1e-11

    @pytest.mark.parametrize("a,b", [(1.2, 1.0), (1.75, 2.0)])
    def test_integral_oracle_matches_series_oracle(self, a, b):
        p = MLParams(a, b)
        for x in (-60.0, -150.0):
            s = ml_oracle(p, x, 25)
            h = ml_oracle_hankel(p, x, 20)
            assert abs(s - h) <= 1e-19 * abs(s)


REGIME_CASES = [(a, b) for a in (1.2, 1.5, 1.75) for b in (1.0, 2.0)]


class TestRegimeOverlap:
    @pytest.mark.parametrize("a,b", REGIME_CASES)
    def test_series_vs_contour(self, a, b):
        p = MLParams(a, b)
        rs, _ = DEFAULT_ACCURACY.thresholds(a)
        x = -np.logspace(np.log10(rs / 2), np.log10(2 * rs), 100)
        s = ml_series(p, x)
        c = ml_contour(p, x)
        np.testing.assert_array_less(np.abs(s - c), 1e-11 * np.abs(c))

    @pytest.mark.parametrize("a,b", REGIME_CASES)
    def test_contour_vs_asymptotic(self, a, b):
        p = MLParams(a, b)
        _, ra = DEFAULT_ACCURACY.thresholds(a)
        x = -np.logspace(np.log10(ra / 2), np.log10(2 * ra), 100)
        c = ml_contour(p, x)
        s = ml_asymptotic(p, x)
        np.testing.assert_array_less(np.abs(s - c), 1e-11 * np.abs(c))


class TestIdentities:
    @pytest.mark.parametrize("a", [1.2, 1.5, 1.75])
    def test_recurrence(self, a):
        x = -np.concatenate([np.logspace(-2, 12, 300), [0.0]])
        for b in (1.0, 2.0):
            lhs = ml_eval(MLParams(a, b), x) - x * ml_eval(MLParams(a, a + b), x)
            np.testing.assert_allclose(lhs, rgamma(b), rtol=1e-11)

    def test_exponential(self):
        x = -np.linspace(0, 700, 2001)
        np.testing.assert_allclose(ml_eval(MLParams(1, 1), x), np.exp(x), rtol=1e-13)

    def test_a1_b2(self):
        x = np.array([0.0, -1e-12, -0.5, -30.0])
        ref = np.array([1.0, 1.0 - 5e-13, -np.expm1(-0.5) / 0.5, -np.expm1(-30.0) / 30.0])
        np.testing.assert_allclose(ml_eval(MLParams(1, 2), x), ref, rtol=1e-14)

    def test_a1_general_b(self):
        v = ml_eval(MLParams(1, 2.5), -3.0)
        assert v == pytest.approx(float(ml_oracle(MLParams(1, 2.5), -3.0, 20)), rel=1e-12)

    def test_a2_is_cosine(self):
        x = -np.linspace(0, 400, 301)
        np.testing.assert_allclose(ml_eval(MLParams(2, 1), x), np.cos(np.sqrt(-x)),
                                   atol=1e-13)

    @pytest.mark.parametrize("a", [1.2, 1.5, 1.75])
    def test_decay_and_leading_term(self, a):
        x = -np.logspace(3, 10, 40)
        v = ml_eval(MLParams(a, 1), x)
        lead = -(1 / x) / gamma(1 - a)
        assert np.all(np.abs(v) <= 2 * np.abs(lead))
        np.testing.assert_allclose(v[-5:], lead[-5:], rtol=1e-3)

    def test_no_failure_up_to_1e12(self):
        x = -np.logspace(-6, 12, 2000)
        for a in (1.2, 1.5, 1.75):
            for b in (1.0, 2.0):
                assert np.all(np.isfinite(ml_eval(MLParams(a, b), x)))


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.3, 1.0), x=st.floats(-700.0, 0.0))
def test_completely_monotone_range(a, x):
    v = ml_eval(MLParams(a, 1), x)
    assert 0.0 < v <= 1.0


@settings(max_examples=60, deadline=None)
@given(a=st.floats(1.01, 1.99), x=st.floats(-1e6, 0.0))
def test_oscillation_bound(a, x):
    v = ml_eval(MLParams(a, 1), x)
    assert -OSCILLATION_BOUND <= v <= 1.0


@settings(max_examples=60, deadline=None)
@given(a=st.floats(1.05, 1.95), b=st.sampled_from([1.0, 2.0]),
       x=st.floats(-1e8, -1e-3))
def test_recurrence_property(a, b, x):
    lhs = ml_eval(MLParams(a, b), x) - x * ml_eval(MLParams(a, a + b), x)
    assert lhs == pytest.approx(rgamma(b), rel=1e-11)
