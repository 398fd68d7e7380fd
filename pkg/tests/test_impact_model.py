import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from impactflow.impact_model import (
    EffectiveDecay,
    ImpactSpec,
    block_proceeds_factor,
    check_condition_d,
    check_convexity_condition,
    golden_section_max,
    j_operator,
    linear_value,
    sell_off_value_linear,
)
from impactflow.levy_noise import SubordinatorSpec, laplace_exponent


def risk_neutral(w, phi, s):
    return w


def _min_second_difference(decay, zmax=200.0, points=4001):
    z = np.linspace(0.0, zmax, points)
    return np.diff(decay.g_hat(z), 2).min()


class TestImpactSpec:
    @pytest.mark.parametrize("p,a0", [(3, 0.01), (0, 0.01), (2, 0.0), (1, -1.0)])
    def test_rejects_invalid(self, p, a0):
        with pytest.raises(ValueError):
            ImpactSpec(p, a0)

    def test_h_inf(self):
        assert ImpactSpec(1, 0.01).h_inf == 0.01
        assert ImpactSpec(2, 0.01).h_inf == math.inf

    def test_g_h(self):
        lin, quad = ImpactSpec(1, 0.5), ImpactSpec(2, 0.5)
        assert lin.g(0.0) == 0.0 and quad.g(0.0) == 0.0
        assert quad.g(3.0) == pytest.approx(4.5)
        assert quad.h(3.0) == pytest.approx(3.0)
        assert lin.h(7.0) == pytest.approx(0.5)

    @pytest.mark.parametrize("p", [1, 2])
    def test_g_convex(self, p):
        rng = np.random.default_rng(0)
        imp = ImpactSpec(p, 0.01)
        z1, z2, lam = rng.uniform(0, 100, 1000), rng.uniform(0, 100, 1000), rng.uniform(0, 1, 1000)
        lhs = imp.g(lam * z1 + (1 - lam) * z2)
        rhs = lam * imp.g(z1) + (1 - lam) * imp.g(z2)
        assert np.all(lhs <= rhs + 1e-12)

    def test_h_is_derivative(self):
        imp = ImpactSpec(2, 0.3)
        z = np.linspace(0.1, 5, 50)
        eps = 1e-6
        assert np.allclose((imp.g(z + eps) - imp.g(z - eps)) / (2 * eps), imp.h(z), rtol=1e-7)


class TestEffectiveDecay:
    def test_matches_laplace_of_g(self):
        noise = SubordinatorSpec(1.0, 3.0, 2.0)
        dec = EffectiveDecay(0.05, 0.01, noise)
        z = np.linspace(0, 40, 101)
        assert np.allclose(dec.g_hat(z), laplace_exponent(noise, 0.01 * z * z), rtol=1e-14, atol=0)
        assert np.allclose(dec.q(z), 0.05 + dec.g_hat(z))

    def test_zero_and_monotone(self):
        dec = EffectiveDecay(0.05, 0.01, SubordinatorSpec(1.0, 1.0, 2.0))
        assert dec.g_hat(0.0) == 0.0
        assert np.all(np.diff(dec.g_hat(np.linspace(0, 100, 1001))) >= 0)

    @pytest.mark.parametrize("gamma,alpha1,beta1", [
        (1.0, 1.0, 2.0), (1.0, 0.5, 4.0), (0.5, 0.5, 1.0), (0.2, 0.4, 0.5), (0.0, 0.0, 2.0),
    ])
    def test_stated_condition_implies_convex_for_small_scale(self, gamma, alpha1, beta1):
        # gamma >= alpha1/2 together with beta1 <= 4 implies gamma >= alpha1*beta1/8
        noise = SubordinatorSpec(gamma, alpha1, beta1)
        assert check_convexity_condition(noise)
        assert _min_second_difference(EffectiveDecay(0.05, 0.01, noise)) >= -1e-10

    @pytest.mark.parametrize("gamma,alpha1,beta1", [
        (1.0, 3.0, 2.0), (1.0, 1.0, 2.0), (0.5, 0.5, 1.0), (0.1, 1.0, 0.8),
        (0.0, 1.0, 2.0), (0.5, 3.0, 2.0), (0.2, 1.0, 8.0), (1.0, 1.0, 10.0),
    ])
    def test_convex_exactly_under_scale_aware_condition(self, gamma, alpha1, beta1):
        noise = SubordinatorSpec(gamma, alpha1, beta1)
        # curvature minimum sits at alpha0*beta1*z^2 = 3
        zmax = 4.0 * math.sqrt(3.0 / (0.01 * beta1))
        convex = _min_second_difference(EffectiveDecay(0.05, 0.01, noise), zmax) >= -1e-10
        assert convex == check_condition_d(noise)

    def test_stated_condition_is_not_necessary(self):
        # convex although gamma < alpha1/2
        noise = SubordinatorSpec(1.0, 3.0, 2.0)
        assert not check_convexity_condition(noise)
        assert _min_second_difference(EffectiveDecay(0.05, 0.01, noise)) >= -1e-10

    def test_stated_condition_is_not_sufficient_for_large_scale(self):
        # gamma >= alpha1/2 but beta1 > 4 leaves a concave stretch
        noise = SubordinatorSpec(1.0, 1.0, 10.0)
        assert check_convexity_condition(noise)
        assert _min_second_difference(EffectiveDecay(0.05, 0.01, noise), 60.0) < 0


class TestConditions:
    @pytest.mark.parametrize("spec,expected", [
        (SubordinatorSpec(1.0, 3.0, 2.0), True),
        (SubordinatorSpec(0.0, 1.0, 2.0), False),
        (SubordinatorSpec(0.2929, 1.0, 0.7071), True),
    ])
    def test_condition_d(self, spec, expected):
        assert check_condition_d(spec) is expected

    @pytest.mark.parametrize("spec,expected", [
        (SubordinatorSpec(1.0, 1.0, 2.0), True),
        (SubordinatorSpec(1.0, 3.0, 2.0), False),
        (SubordinatorSpec(0.5, 0.5, 1.0), True),
    ])
    def test_convexity_condition(self, spec, expected):
        assert check_convexity_condition(spec) is expected


class TestLinearValue:
    def test_reference_value(self):
        with mpmath.workdps(40):
            ref = float((1 - mpmath.exp(-mpmath.mpf("0.01"))) / mpmath.mpf("0.01"))
        assert linear_value(0, 1, 1, 1, 0.01) == pytest.approx(ref, rel=1e-15)
        assert linear_value(0, 1, 1, 1, 0.01) == pytest.approx(0.9950166, abs=5e-8)

    def test_nothing_to_sell(self):
        assert linear_value(5, 0, 7, 1, 0.01) == 5

    def test_frictionless_limit(self):
        assert linear_value(0, 1, 1, 0, 0.01) == 1.0
        assert linear_value(0, 1, 1, 1e-12, 1e-3) == pytest.approx(1.0, abs=1e-14)

    def test_series_branch_is_continuous(self):
        xs = np.array([1e-10, 5e-9, 9.99e-9, 1.001e-8, 2e-8, 1e-6])
        for x in xs:
            with mpmath.workdps(50):
                ref = float(-mpmath.expm1(-mpmath.mpf(x)) / mpmath.mpf(x))
            assert block_proceeds_factor(x) == pytest.approx(ref, rel=1e-15)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            linear_value(0, -1, 1, 1, 0.01)
        with pytest.raises(ValueError):
            linear_value(0, 1, -1, 1, 0.01)

    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 10), st.floats(0.01, 10))
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, phi, dphi, s, ga):
        v = linear_value(0, phi, s, ga, 1.0)
        assert linear_value(0, phi + dphi, s, ga, 1.0) >= v - 1e-12 * (1 + v)
        assert linear_value(0, phi, s * 1.5, ga, 1.0) >= v
        assert linear_value(0, phi, s, ga * 1.5, 1.0) <= v + 1e-12 * (1 + v)


class TestJOperator:
    def test_frictionless_block(self):
        assert j_operator(risk_neutral, 0.0, 2.0, 1.0, 0.0) == pytest.approx(2.0, rel=1e-12)

    def test_full_sale_with_impact(self):
        ref = (1 - math.exp(-1.0)) / 0.01
        assert j_operator(risk_neutral, 0.0, 100.0, 1.0, 0.01) == pytest.approx(ref, rel=1e-12)
        assert ref == pytest.approx(63.2121, abs=1e-4)

    def test_dense_scan_oracle(self):
        psi = np.linspace(0, 100, 1_000_001)
        brute = np.max(psi * block_proceeds_factor(0.01 * psi))
        assert j_operator(risk_neutral, 0.0, 100.0, 1.0, 0.01) >= brute - 1e-12

    def test_empty_sale(self):
        def u(w, phi, s):
            return w + 2 * phi + 3 * s
        assert j_operator(u, 1.0, 0.0, 4.0, 0.5) == u(1.0, 0.0, 4.0)

    @pytest.mark.parametrize("phi,s,gamma", [(1.0, 1.0, 1.0), (10.0, 2.0, 0.3), (3.0, 0.5, 5.0)])
    def test_equals_linear_value(self, phi, s, gamma):
        got = j_operator(risk_neutral, 0.5, phi, s, gamma * 0.01)
        assert got == pytest.approx(linear_value(0.5, phi, s, gamma, 0.01), rel=1e-12)

    def test_interior_optimum_for_nonmonotone_objective(self):
        # reward for keeping holdings makes the best sale interior
        def u(w, phi, s):
            return w - (phi - 0.3) ** 2

        psi = np.linspace(0, 1, 2_000_001)
        brute = np.max(u(psi * block_proceeds_factor(0.2 * psi), 1 - psi, 1.0))
        assert j_operator(u, 0.0, 1.0, 1.0, 0.2) == pytest.approx(brute, abs=1e-11)

    def test_scalar_only_utility(self):
        def u(w, phi, s):
            return min(float(w), 10.0)
        assert j_operator(u, 0.0, 100.0, 1.0, 0.01) == pytest.approx(10.0)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            j_operator(risk_neutral, 0, -1, 1, 0.01)
        with pytest.raises(ValueError):
            j_operator(risk_neutral, 0, 1, -1, 0.01)


class TestSellOff:
    def test_identity_is_linear_value(self):
        assert sell_off_value_linear(lambda x: x, 0.0, 3.0, 1.0, 1.0, 0.01) == linear_value(0.0, 3.0, 1.0, 1.0, 0.01)

    def test_clipped(self):
        assert sell_off_value_linear(lambda x: min(x, 10.0), 0, 100, 1, 1, 0.01) == 10.0

    def test_no_holdings(self):
        assert sell_off_value_linear(math.sqrt, 4.0, 0.0, 1.0, 1.0, 0.01) == 2.0


class TestGoldenSection:
    def test_quadratic(self):
        x, f = golden_section_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0, 1e-12)
        assert x == pytest.approx(0.3, abs=1e-9)
        assert f == pytest.approx(0.0, abs=1e-15)
