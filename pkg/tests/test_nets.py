"""Tests for eps-net arithmetic and asymptotic classification."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gensolv.errors import GridMismatch, NotInvertible
from gensolv.nets import (
    EpsGrid,
    GenNumber,
    classify,
    invert,
    is_negligible_difference,
    net_arith,
    ultra_norm,
    valuation,
)

GRID = EpsGrid.default()


def power_net(b, c=1.0):
    return GenNumber(GRID, c * GRID.values.astype(complex) ** b)


def indicator_net(even=True):
    """1 on eps = 2^-k with k even (or odd), 0 otherwise."""
    k = np.arange(len(GRID))
    mask = (k % 2 == 0) if even else (k % 2 == 1)
    return GenNumber(GRID, mask.astype(complex))


class TestGrid:
    def test_default_grid(self):
        assert len(GRID) == 25
        assert GRID.values[0] == 1.0
        assert GRID.values[-1] == 2.0**-24

    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            EpsGrid(np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            EpsGrid(np.array([2.0, 1.0]))
        with pytest.raises(ValueError):
            EpsGrid(np.array([]))


class TestClassify:
    def test_power_law_exponent(self):
        # closed-form slope of an exact power law
        rep = classify(power_net(-3))
        assert rep.verdict == "Moderate"
        assert rep.fitted_exponent == pytest.approx(-3.0, abs=0.05)

    def test_constant_net(self):
        rep = classify(GenNumber.constant(1.0, GRID))
        assert rep.verdict == "Moderate"
        assert rep.fitted_exponent == pytest.approx(0.0, abs=1e-12)
        assert rep.strictly_nonzero

    def test_exponentially_small_net(self):
        # e^{-1/eps} = o(eps^q) for all q; numerically it underflows on the
        # tail and in any case sits below eps^16 there
        u = GenNumber(GRID, np.exp(-1.0 / GRID.values))
        eps_t = GRID.values[GRID.tail]
        assert np.all(np.abs(u.samples[GRID.tail]) <= eps_t**16)
        assert classify(u).verdict == "Negligible"

    def test_all_zero_net(self):
        rep = classify(GenNumber.constant(0.0, GRID))
        assert rep.verdict == "Negligible"
        assert np.isinf(rep.fitted_exponent)
        assert not rep.strictly_nonzero

    def test_slow_scale_log(self):
        u = GenNumber(GRID, np.log(1.0 / GRID.values))
        rep = classify(u)
        assert rep.verdict == "SlowScale"
        # the defining bound: |u|^q * eps admits a finite c_q for q <= 8,
        # i.e. the product does not grow along the small-eps tail
        tail = GRID.tail
        for q in range(1, 9):
            prod = np.abs(u.samples) ** q * GRID.values
            assert np.isfinite(prod).all()
            assert prod[tail][-1] <= prod[tail][0] * 1.001

    def test_decaying_power_is_moderate_not_slow_scale(self):
        rep = classify(power_net(5))
        assert rep.verdict == "Moderate"
        assert rep.fitted_exponent == pytest.approx(5.0, abs=0.05)

    def test_strictly_nonzero_implies_not_negligible(self):
        # eps^20 exceeds the finite negligibility order but carries a
        # strictly-nonzero certificate, which wins
        rep = classify(power_net(20))
        assert rep.strictly_nonzero
        assert rep.verdict == "Moderate"

    def test_wild_oscillation_not_moderate(self):
        # alternates between eps^-2 and eps^2: no power law fits
        k = np.arange(len(GRID))
        u = GenNumber(GRID, np.where(k % 2 == 0, GRID.values**-2.0, GRID.values**2.0))
        rep = classify(u)
        assert rep.verdict == "NotModerate"
        assert rep.fit_residual > 0.15

    def test_indicator_net(self):
        rep = classify(indicator_net())
        assert rep.verdict == "Moderate"
        assert not rep.strictly_nonzero


class TestValuation:
    def test_exact_power(self):
        assert valuation(power_net(2)) == pytest.approx(2.0, abs=0.05)

    def test_constant_factor_does_not_shift(self):
        assert valuation(power_net(2, c=5.0)) == pytest.approx(2.0, abs=0.05)

    def test_dominant_term(self):
        u = power_net(2) + power_net(5)
        assert valuation(u) == pytest.approx(2.0, abs=0.05)

    def test_ultra_norm(self):
        assert ultra_norm(power_net(2)) == pytest.approx(np.exp(-2.0), rel=0.1)
        assert ultra_norm(GenNumber.constant(0.0, GRID)) == 0.0


class TestInvert:
    def test_reciprocal(self):
        u = power_net(1)
        v = invert(u)
        np.testing.assert_allclose(v.samples, 1.0 / GRID.values, rtol=1e-14)
        assert classify(v).fitted_exponent == pytest.approx(-1.0, abs=0.05)

    def test_constant(self):
        v = invert(GenNumber.constant(2.0, GRID))
        np.testing.assert_allclose(v.samples, 0.5)

    def test_alternating_net_not_invertible(self):
        with pytest.raises(NotInvertible):
            invert(indicator_net())

    def test_involution(self):
        u = power_net(3, c=2.0)
        np.testing.assert_array_equal(invert(invert(u)).samples, u.samples)


class TestArithmetic:
    def test_product_of_powers(self):
        u = net_arith(power_net(-1), power_net(2), "*")
        np.testing.assert_allclose(u.samples, GRID.values, rtol=1e-14)

    def test_additive_identity(self):
        one = GenNumber.constant(1.0, GRID)
        zero = GenNumber.constant(0.0, GRID)
        assert (one + zero) == one

    def test_complementary_indicators_sum_to_one(self):
        a, b = indicator_net(True), indicator_net(False)
        s = a * a + b * b
        np.testing.assert_allclose(s.samples, 1.0)
        assert classify(s).strictly_nonzero

    def test_grid_mismatch(self):
        other = GenNumber.constant(1.0, EpsGrid.default(k_max=10))
        with pytest.raises(GridMismatch):
            net_arith(power_net(1), other, "+")

    def test_division_checks_invertibility(self):
        with pytest.raises(NotInvertible):
            net_arith(power_net(1), indicator_net(), "/")


class TestProperties:
    @given(
        a=st.floats(min_value=-10, max_value=10),
        b=st.floats(min_value=-10, max_value=10),
    )
    @settings(max_examples=25, deadline=None)
    def test_product_exponents_add(self, a, b):
        rep = classify(power_net(a) * power_net(b))
        assert rep.fitted_exponent == pytest.approx(a + b, abs=0.1)

    @given(
        a=st.floats(min_value=-8, max_value=8),
        b=st.floats(min_value=-8, max_value=8),
    )
    @settings(max_examples=25, deadline=None)
    def test_valuation_ultrametric(self, a, b):
        v = valuation(power_net(a) + power_net(b))
        assert v >= min(a, b) - 0.1

    def test_negligible_difference(self):
        u = power_net(1)
        tiny = GenNumber(GRID, np.exp(-1.0 / GRID.values))
        assert is_negligible_difference(u, u + tiny)
        assert not is_negligible_difference(u, power_net(2))


class TestExpressions:
    def test_from_expression(self):
        u = GenNumber.from_expression("eps^-3", GRID)
        np.testing.assert_allclose(u.samples.real, GRID.values**-3.0, rtol=1e-13)

    def test_expression_grammar(self):
        u = GenNumber.from_expression("2*exp(-1/eps) + log(1/eps)/2", GRID)
        expect = 2 * np.exp(-1 / GRID.values) + np.log(1 / GRID.values) / 2
        np.testing.assert_allclose(u.samples.real, expect, rtol=1e-13)

    def test_rejects_unknown_symbols(self):
        from gensolv.errors import ParseError

        with pytest.raises(ParseError):
            GenNumber.from_expression("eps + q", GRID)
