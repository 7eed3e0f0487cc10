import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from conjlab.quadrature import (
    TailEnvelope,
    TruncationError,
    adaptive_integral,
    choose_horizon,
    gk15_rule,
    integrate_decaying,
    integrate_half_line,
)


def exp_env(rate=1.0, c=1.0):
    return TailEnvelope(lambda s: c * np.exp(-rate * np.asarray(s)), tail=lambda T: c * math.exp(-rate * T) / rate)


def kinked(s):
    s = np.asarray(s, float)
    return np.where(s <= 2, np.exp(-(2 - s)), np.exp(-(s - 2)))


KINK_EXACT = 2 - math.exp(-2)


class TestRule:
    def test_weights_sum_to_interval_length(self):
        _, wk, wg = gk15_rule()
        assert wk.sum() == pytest.approx(2.0, abs=1e-15)
        assert wg.sum() == pytest.approx(2.0, abs=1e-15)

    @given(st.integers(0, 23))
    def test_kronrod_exact_to_degree_23(self, k):
        # 2n+1 Kronrod points with n = 7 odd integrate degree 3n + 2 exactly
        x, wk, _ = gk15_rule()
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert np.dot(wk, x**k) == pytest.approx(exact, abs=1e-14)

    @given(st.integers(0, 13))
    def test_gauss_exact_to_degree_13(self, k):
        x, _, wg = gk15_rule()
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert np.dot(wg, x**k) == pytest.approx(exact, abs=1e-14)


class TestHalfLine:
    def test_exponential(self):
        res = integrate_half_line(lambda s: np.exp(-s), 0.0, exp_env(), 1e-10)
        assert res.value == pytest.approx(1.0, abs=1e-9)
        assert res.tail_bound <= 1e-10

    def test_zero_integrand(self):
        res = integrate_half_line(lambda s: np.zeros_like(s), 1.0, TailEnvelope(lambda s: np.zeros_like(s), tail=lambda T: 0.0), 1e-10)
        assert res.value == 0.0 and res.tail_bound == 0.0

    def test_kink_at_split(self):
        res = integrate_half_line(kinked, 2.0, exp_env(), 1e-10)
        assert abs(res.value - KINK_EXACT) <= 1e-8

    def test_ignoring_the_kink_regresses(self):
        # a fixed panel layout that straddles the kink, no adaptivity
        res = integrate_half_line(kinked, 2.0, exp_env(), 1e-10, adaptive=False, honor_split=False, n_initial=7)
        assert abs(res.value - KINK_EXACT) >= 1e-5

    def test_vector_valued(self):
        g = lambda s: np.stack([np.exp(-s), s * np.exp(-2 * s)], axis=-1)  # noqa: E731
        res = integrate_half_line(g, 0.0, exp_env(), 1e-11)
        assert np.allclose(res.value, [1.0, 0.25], atol=1e-10)

    def test_env_none_stops_at_split(self):
        res = integrate_half_line(lambda s: np.ones_like(s), 3.0, None, 1e-12)
        assert res.value == pytest.approx(3.0) and res.horizon == 3.0

    def test_horizon_exhaustion(self):
        slow = TailEnvelope(lambda s: 1 / (1 + np.asarray(s)) ** 1.5, tail=lambda T: 2 / math.sqrt(1 + T))
        with pytest.raises(TruncationError) as exc:
            integrate_half_line(lambda s: 1 / (1 + s) ** 1.5, 0.0, slow, 1e-10, cap=200)
        assert exc.value.achieved > 1e-10

    def test_numeric_envelope_tail(self):
        env = TailEnvelope(lambda s: np.exp(-0.5 * np.asarray(s)))
        assert env.tail_integral(4.0) == pytest.approx(2 * math.exp(-2), rel=1e-7)

    def test_choose_horizon_doubles(self):
        T, tail = choose_horizon(exp_env(), 1e-10, 10.0, 200.0)
        assert T == 40.0 and tail <= 1e-10

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (0.5, 3.0)])
    def test_matches_scipy(self, a, b):
        g = lambda s: np.sin(3 * s) * np.exp(-a * s) / (1 + s * s) if a else np.exp(-b * s) * np.cos(s)  # noqa: E731
        env = TailEnvelope(lambda s: np.exp(-min(a or b, 1.0) * np.asarray(s)) if a else np.exp(-b * np.asarray(s)))
        if a:
            env = TailEnvelope(lambda s: 1 / (1 + np.asarray(s) ** 2) * np.exp(-a * np.asarray(s)))
        ref, _ = quad(lambda s: float(g(np.array([s]))[0]), 0, np.inf, epsabs=1e-13, limit=500)
        res = integrate_half_line(g, 1.0, env, 1e-11, cap=400)
        assert res.value == pytest.approx(ref, abs=1e-9)

    @given(st.floats(0.2, 3.0), st.floats(0.0, 8.0))
    def test_halving_tolerance_is_self_consistent(self, rate, split):
        g = lambda s: np.exp(-rate * np.abs(s - split))  # noqa: E731
        env = exp_env(rate, math.exp(rate * split))
        tol = 1e-8
        a = integrate_half_line(g, split, env, tol, cap=1000).value
        b = integrate_half_line(g, split, env, tol / 2, cap=1000).value
        assert abs(a - b) <= 2 * tol


class TestAdaptive:
    def test_sqrt_singularity(self):
        val, err, n = adaptive_integral(lambda s: np.sqrt(s), [0.0, 1.0], 1e-10)
        assert val == pytest.approx(2 / 3, abs=1e-9) and n > 1

    def test_empty_interval(self):
        val, err, n = adaptive_integral(lambda s: np.ones_like(s), [1.0, 1.0], 1e-10)
        assert val == 0.0 and n == 0


class TestDecaying:
    def test_finite(self):
        res = integrate_decaying(lambda s: np.exp(-0.3 * np.asarray(s)), 1.0, 1e-10)
        assert res.finite
        assert res.value + res.tail_estimate == pytest.approx(math.exp(-0.3) / 0.3, rel=1e-7)
        assert res.rate == pytest.approx(-0.3, rel=1e-6)

    def test_growth_detected(self):
        res = integrate_decaying(lambda s: np.exp(0.2 * np.asarray(s)), 0.0, 1e-10, span=50)
        assert not res.finite and res.rate == pytest.approx(0.2)

    def test_constant_is_not_integrable(self):
        res = integrate_decaying(lambda s: np.ones_like(np.asarray(s, float)), 0.0, 1e-10)
        assert not res.finite

    def test_zero(self):
        res = integrate_decaying(lambda s: np.zeros_like(np.asarray(s, float)), 0.0, 1e-10)
        assert res.finite and res.value == 0.0
