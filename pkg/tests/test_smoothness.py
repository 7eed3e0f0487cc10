import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from conjlab import (
    ConfigurationError,
    DichotomySpec,
    G_map,
    H_map,
    LinearSystemSpec,
    NonlinearitySpec,
    get_entry,
    w_star,
)
from conjlab.flows import first_variation, second_variation, tensor_norm
from conjlab.smoothness import (
    BoundLedger,
    SingularityError,
    closed_form_pi,
    d2w_star,
    d2w_star_detail,
    dG,
    dH,
    dw_star,
    second_derivative_bound,
    verify_second_order_condition,
)

from conftest import central, rel_err, seeded_points


def const(c):
    return lambda s: c * np.ones_like(np.asarray(s, float))


def _bound_system(M=1.0, nu=0.1, zeta=0.2, eps2=1.0):
    sys = LinearSystemSpec(1, lambda t: np.array([[M]]), M)
    nl = NonlinearitySpec(lambda t, u: 0 * u, const(nu), const(nu), V_env=lambda s: zeta * np.exp(-eps2 * np.asarray(s, float)))
    spec = DichotomySpec(np.eye(1), const(1.0), lambda t: np.exp(-np.asarray(t, float)),
                         {"nu": nu, "zeta": zeta, "eps2": eps2, "M": M})
    return sys, nl, spec


class TestBounds:
    def test_closed_form_value(self):
        # (0.2 / 1.2) [e^{2.3} - e^{1.1}]
        expected = 0.2 / 1.2 * (math.exp(2.3) - math.exp(1.1))
        assert closed_form_pi(1.0, 0.1, 0.2, 1.0, 0.0, 1.0) == pytest.approx(expected, rel=1e-13)
        assert expected == pytest.approx(1.1617, abs=5e-5)

    def test_general_bound_matches_closed_form(self):
        sys, nl, spec = _bound_system()
        general = second_derivative_bound(sys, nl, spec, 1.0, 0.0, method="general")
        closed = second_derivative_bound(sys, nl, spec, 1.0, 0.0, method="closed")
        assert abs(general - closed) <= 1e-6

    def test_general_bound_by_quadrature(self):
        # independent nested scipy quadrature of Psi(s) int_tau^s V(p) Psi(p)^2 dp
        sys, nl, spec = _bound_system(M=0.7, nu=0.3, zeta=0.5, eps2=0.4)
        tau, s = 0.5, 2.0
        psi = lambda p: math.exp(1.0 * (p - tau))  # noqa: E731
        inner = quad(lambda p: 0.5 * math.exp(-0.4 * p) * psi(p) ** 2, tau, s, epsabs=1e-14)[0]
        assert BoundLedger(sys, nl, tau).pi(s) == pytest.approx(psi(s) * inner, rel=1e-9)

    @given(st.floats(0, 5), st.floats(0, 5))
    def test_ledger_entries_at_least_one(self, tau, ds):
        sys, nl, _ = _bound_system()
        led = BoundLedger(sys, nl, tau)
        assert led.psi(tau + ds) >= 1.0
        assert led.exponent(tau + ds) == pytest.approx(1.1 * ds, abs=1e-10)

    def test_empty_inner_integral(self):
        sys, nl, spec = _bound_system()
        assert second_derivative_bound(sys, nl, spec, 2.0, 2.0, method="general") == 0.0
        assert second_derivative_bound(sys, nl, spec, 2.0, 2.0, method="closed") == 0.0

    def test_zero_second_envelope(self):
        sys = LinearSystemSpec(1, lambda t: np.array([[-1.0]]), 1.0)
        nl = NonlinearitySpec(lambda t, u: 0.2 * u, const(1.0), const(0.2), V_env=const(0.0))
        assert second_derivative_bound(sys, nl, None, 3.0, 0.0) == 0.0

    def test_degenerate_closed_form(self):
        sys, nl, spec = _bound_system(M=0.4, nu=0.1, eps2=1.0)
        with pytest.raises(ConfigurationError):
            second_derivative_bound(sys, nl, spec, 1.0, 0.0, method="closed")

    def test_before_tau_rejected(self):
        sys, nl, _ = _bound_system()
        with pytest.raises(ValueError):
            BoundLedger(sys, nl, 2.0).psi(1.0)

    @pytest.mark.parametrize("name", ["S3", "S4"])
    def test_variations_within_bounds(self, name):
        e = get_entry(name)
        rng = np.random.default_rng(7)
        for tau, eta in zip(rng.uniform(0, 3, 5), rng.uniform(-2, 2, 5)):
            s = tau + np.linspace(0, 8, 17)
            z = first_variation(e.sys, e.nl, tau, [eta], s)(s)
            w = second_variation(e.sys, e.nl, tau, [eta], s)(s)
            assert np.all(np.abs(z[:, 0, 0]) <= BoundLedger(e.sys, e.nl, tau).psi(s) * (1 + 1e-7))
            bound = second_derivative_bound(e.sys, e.nl, e.spec, s, tau, method="auto")
            assert np.all(tensor_norm(w) <= bound * (1 + 1e-7) + 1e-12)


class TestSecondOrderCondition:
    def test_zero_envelopes(self):
        sys = LinearSystemSpec(1, lambda t: np.array([[-1.0]]), 1.0)
        nl = NonlinearitySpec(lambda t, u: 0 * u, const(0.0), const(0.0), V_env=const(0.0))
        spec = DichotomySpec(np.eye(1), const(1.0), lambda t: np.exp(-np.asarray(t, float)))
        from conjlab import ConjugacyProblem
        r = verify_second_order_condition(ConjugacyProblem(sys, spec, nl), 0.0)
        assert r.passed and r.value == 0.0

    @pytest.mark.parametrize("method", ["closed", "general"])
    def test_nonuniform_pass_and_fail(self, method):
        base = dict(nu=0.05, zeta=0.05, lam=1.0, eps1=0.1, eps2=0.1, C=1.0)
        good = get_entry("S4", M=0.2, **base).problem()
        bad = get_entry("S4", M=0.6, **base).problem()
        assert 2 * 0.2 < 1 + 0.1 - 0.1 and not 2 * 0.6 < 1 + 0.1 - 0.1
        assert verify_second_order_condition(good, 0.0, method).passed
        assert not verify_second_order_condition(bad, 0.0, method).passed

    def test_rate_of_slower_term(self):
        p = get_entry("S4", M=0.2, nu=0.05, zeta=0.05, eps2=0.1).problem()
        r = verify_second_order_condition(p, 0.0, "closed")
        # K h pi v decays like e^{(3 (M + nu) - lam - eps2) s}, the slower of the two terms here
        assert r.rate == pytest.approx(3 * 0.25 - 1.0 - 0.1, abs=1e-4)

    def test_sin_entry_not_certified(self, s3):
        assert not verify_second_order_condition(s3, 0.0).passed


class TestFirstDerivatives:
    def test_y_independent_forcing(self, s1):
        assert np.allclose(dw_star(s1, 1.0, [0.3]), 0.0)
        assert dG(s1, 1.0, [0.3])[0, 0] == pytest.approx(1.0, abs=1e-8)
        assert dH(s1, 1.0, [0.3])[0, 0] == pytest.approx(1.0, abs=1e-8)

    def test_unperturbed(self):
        p = get_entry("S2", unperturbed=True).problem()
        assert np.allclose(dw_star(p, 1.0, [0.3, 0.1]), 0.0)
        assert np.allclose(dG(p, 1.0, [0.3, 0.1]), np.eye(2), atol=1e-8)
        assert np.allclose(dH(p, 1.0, [0.3, 0.1]), np.eye(2), atol=1e-8)

    def test_sin_entry_dw_matches_difference(self, s3):
        fd = central(lambda e: w_star(s3, 0.0, 1.0, e), np.array([0.5]), 1e-5)
        assert np.abs(dw_star(s3, 1.0, [0.5]) - fd).max() <= 1e-10

    def test_sin_entry_dG_dH(self, s3):
        fd_G = central(lambda e: G_map(s3, 1.0, e).value, np.array([0.5]), 1e-5)
        fd_H = central(lambda e: H_map(s3, 1.0, e).value, np.array([0.5]), 1e-5)
        assert rel_err(dG(s3, 1.0, [0.5]), fd_G) <= 1e-4
        assert rel_err(dH(s3, 1.0, [0.5]), fd_H) <= 1e-4

    @pytest.mark.parametrize("tau,eta", [(0.7, (0.4, -0.3)), (2.2, (-1.5, 0.8))])
    def test_saddle_dw(self, saddle_problem, tau, eta):
        eta = np.array(eta)
        ours = dw_star(saddle_problem, tau, eta)
        fd = central(lambda e: w_star(saddle_problem, 0.0, tau, e), eta, 1e-5)
        assert np.abs(ours).max() > 1e-3
        assert rel_err(ours, fd) <= 1e-4

    def test_saddle_inverse_identity(self, saddle_problem):
        taus, pts = seeded_points(5, d=2)
        for tau, xi in zip(taus, pts):
            Hv = H_map(saddle_problem, tau, xi).value
            prod = dH(saddle_problem, tau, xi) @ dG(saddle_problem, tau, Hv)
            assert np.abs(prod - np.eye(2)).max() <= 1e-6

    def test_singular_flagged(self, monkeypatch, s3):
        import conjlab.smoothness as sm
        monkeypatch.setattr(sm, "dG", lambda *a, **k: np.zeros((1, 1)))
        with pytest.raises(SingularityError):
            sm.dH(s3, 1.0, [0.5])


class TestSecondDerivatives:
    def test_sin_entry(self, s3):
        with pytest.warns(Warning):
            d2 = d2w_star(s3, 1.0, [0.5])
        fd = central(lambda e: dw_star(s3, 1.0, e), np.array([0.5]), 1e-3)
        assert np.abs(d2 - fd).max() <= 1e-10

    def test_uncertified_status(self, s3):
        assert not d2w_star_detail(s3, 1.0, [0.5]).certified

    @pytest.mark.parametrize("tau,eta", [(0.7, (0.4, -0.3)), (1.9, (1.1, 1.4))])
    def test_saddle_matches_difference_and_is_symmetric(self, saddle_problem, tau, eta):
        eta = np.array(eta)
        res = d2w_star_detail(saddle_problem, tau, eta)
        assert res.certified
        fd = central(lambda e: dw_star(saddle_problem, tau, e), eta, 1e-3)
        assert np.abs(res.value).max() > 1e-3
        assert rel_err(res.value, fd) <= 1e-3
        assert np.abs(res.value - np.swapaxes(res.value, 1, 2)).max() <= 1e-6

    def test_affine_perturbation(self):
        e = get_entry("S2")
        nl = NonlinearitySpec(
            f=lambda t, u: 0.1 * np.exp(-3 * t)[:, None] * u,
            u_env=lambda s: 10 * np.exp(-3 * np.asarray(s, float)),
            v_env=lambda s: 0.1 * np.exp(-3 * np.asarray(s, float)),
            df=lambda t, u: 0.1 * np.exp(-3 * t)[:, None, None] * np.eye(2),
            d2f=lambda t, u: np.zeros((len(u), 2, 2, 2)),
            V_env=lambda s: np.zeros_like(np.asarray(s, float)),
        )
        from conjlab import ConjugacyProblem
        p = ConjugacyProblem(e.sys, e.spec, nl)
        assert np.abs(d2w_star_detail(p, 0.5, [0.2, 0.4]).value).max() <= 1e-14
