"""First and second derivatives of the conjugacy and their a-priori bounds.

Derivatives of G go through the identity G(tau, eta) = X(tau, 0) [y(0) + w(0)],
whose eta-derivative only needs the correction at time zero:

    dw(0)  = -int G(0,s) f_u(s, y) z(s) ds
    d2w(0) = -int G(0,s) [f_u(s, y) w(s) + f_uu(s, y)(z, z)] ds

with z, w the first and second variations of y.  H is differentiated as the
inverse of dG at H(tau, xi).

Growth bounds are tabulated in log form by ``BoundLedger``: ``L(s)`` is the
integral of |A| + v from tau and ``pi(s) = e^L int V e^{2L}``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .conjugacy import ConjugacyProblem, H_map, HypothesisWarning, G_map
from .dichotomy import ConfigurationError
from .flows import (
    CapabilityError,
    LinearSystemSpec,
    NonlinearitySpec,
    opnorm,
    solve_nonlinear,
    variational_flow,
)
from .quadrature import TailEnvelope, TruncationError, choose_horizon, integrate_decaying, integrate_half_line

__all__ = [
    "SingularityError",
    "BoundLedger",
    "DerivativeBundle",
    "DerivativeIntegral",
    "SecondOrderCondition",
    "dw_star",
    "dw_star_detail",
    "dG",
    "dH",
    "d2w_star",
    "d2w_star_detail",
    "derivative_bundle",
    "second_derivative_bound",
    "closed_form_pi",
    "verify_second_order_condition",
    "central_difference",
    "relative_error",
]


class SingularityError(ArithmeticError):
    """dG is numerically singular; the hypotheses may be violated."""

    def __init__(self, condition: float):
        super().__init__(f"dG is singular to working precision (condition number {condition:.3e})")
        self.condition = condition


class BoundLedger:
    """Gronwall factor and second-variation bound from a fixed initial time.

    Integrates L' = |A(s)| + v(s) and B~' = V(s) - 2 L'(s) B~, where
    B~ = e^{-2L} int_tau^s V e^{2L}; hence ``log pi = 3 L + log B~``.
    Extends its horizon by doubling.
    """

    def __init__(self, sys: LinearSystemSpec, nl: NonlinearitySpec, tau: float, horizon: float = 20.0,
                 rtol: float = 1e-12, atol: float = 1e-14):
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        self.sys, self.nl, self.tau = sys, nl, float(tau)
        self.rtol, self.atol = rtol, atol
        self._sol = None
        self._end = self.tau
        self._ensure(self.tau + horizon)

    def _rate(self, s: float) -> float:
        return float(opnorm(self.sys.A(s)) + self.nl.v_env(np.array([s]))[0])

    def _ensure(self, upto: float) -> None:
        if upto <= self._end and self._sol is not None:
            return
        end = max(upto, self.tau + 2 * (self._end - self.tau), self.tau + 1.0)
        V = self.nl.V_env

        def rhs(s, y):
            r = self._rate(s)
            Vs = float(V(np.array([s]))[0]) if V is not None else 0.0
            return [r, Vs - 2 * r * y[1]]

        sol = solve_ivp(rhs, (self.tau, end), [0.0, 0.0], method="DOP853", rtol=self.rtol,
                        atol=self.atol, dense_output=True)
        if not sol.success:
            raise RuntimeError(f"bound ledger integration failed: {sol.message}")
        self._sol = sol
        self._end = end

    def _eval(self, s) -> np.ndarray:
        s = np.asarray(s, float)
        if np.any(s < self.tau - 1e-12):
            raise ValueError("bounds are defined for s >= tau")
        s = np.maximum(s, self.tau)
        if s.size:
            self._ensure(float(s.max()))
        out = self._sol.sol(s.ravel())
        return out.reshape((2,) + s.shape)

    def exponent(self, s) -> np.ndarray:
        """int_tau^s |A| + v."""
        return self._eval(s)[0]

    def psi(self, s) -> np.ndarray:
        return np.exp(self.exponent(s))

    gronwall_first = psi

    def log_pi(self, s) -> np.ndarray:
        L, Bt = self._eval(s)
        with np.errstate(divide="ignore"):
            return 3 * L + np.log(np.maximum(Bt, 0.0))

    def pi(self, s) -> np.ndarray:
        return np.exp(self.log_pi(s))


def _closed_params(problem_or_spec, sys: LinearSystemSpec) -> dict[str, float]:
    params = problem_or_spec.params
    missing = [k for k in ("nu", "zeta", "eps2") if k not in params]
    if missing:
        raise ConfigurationError(f"closed-form second-variation bound needs parameters {missing}")
    M = float(params["M"]) if "M" in params else float(sys.uniform_bound)
    return {"M": M, "nu": float(params["nu"]), "zeta": float(params["zeta"]), "eps2": float(params["eps2"])}


def closed_form_log_pi(M: float, nu: float, zeta: float, eps2: float, tau: float, s) -> np.ndarray:
    """Log of the explicit second-variation bound for v <= nu, V = zeta e^{-eps2 s}, |A| <= M."""
    a = M + nu
    c = 2 * a - eps2
    if c == 0:
        raise ConfigurationError("closed-form bound undefined when 2(M + nu) = eps2")
    s = np.asarray(s, float)
    x = c * (s - tau)
    # log((e^{c s} - e^{c tau}) / c) = c tau + log(expm1(x) / c), kept finite for large |x|
    with np.errstate(divide="ignore"):
        if c > 0:
            tail = np.where(x > 0, x + np.log(-np.expm1(-np.maximum(x, 1e-300))), -np.inf) - math.log(c)
        else:
            tail = np.log(-np.expm1(np.minimum(x, 0.0))) - math.log(-c)
    return math.log(zeta) + a * (s - 3 * tau) + c * tau + tail


def closed_form_pi(M: float, nu: float, zeta: float, eps2: float, tau: float, s) -> np.ndarray:
    return np.exp(closed_form_log_pi(M, nu, zeta, eps2, tau, s))


def second_derivative_bound(sys: LinearSystemSpec, nl: NonlinearitySpec, spec, s, tau: float,
                            method: str = "general") -> np.ndarray:
    """Bound on |d^2y/deta^2(s, tau, eta)|.

    ``"general"`` integrates the general Gronwall-type bound, ``"closed"`` uses
    the explicit exponential formula with ``spec.params`` (nu, zeta, eps2 and
    M, defaulting to the system's uniform bound); ``"auto"`` prefers the
    closed form when those parameters exist.
    """
    method = _resolve_method(method, spec)
    if method == "closed":
        p = _closed_params(spec, sys)
        return closed_form_pi(p["M"], p["nu"], p["zeta"], p["eps2"], float(tau), s)
    if nl.V_env is None:
        raise CapabilityError("the second-derivative bound needs the envelope V")
    return BoundLedger(sys, nl, tau).pi(s)


def _resolve_method(method: str, spec) -> str:
    if method not in ("auto", "general", "closed"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        params = getattr(spec, "params", {})
        return "closed" if all(k in params for k in ("nu", "zeta", "eps2")) else "general"
    return method


@dataclass(frozen=True)
class SecondOrderCondition:
    passed: bool
    value: float
    rate: float
    horizon: float
    method: str


def _log_khx(problem: ConjugacyProblem, env: Callable | None, s: np.ndarray) -> np.ndarray:
    spec = problem.spec
    with np.errstate(divide="ignore"):
        base = np.log(np.asarray(spec.K(s), float)) + np.log(np.asarray(spec.h(s), float))
        if env is None:
            return np.full_like(s, -np.inf)
        return base + np.log(np.asarray(env(s), float))


def _second_order_integrand(problem: ConjugacyProblem, tau: float, method: str) -> Callable:
    """K h {pi v + V Psi^2} evaluated in log space."""
    ledger = BoundLedger(problem.sys, problem.nl, tau)
    if problem.nl.V_env is None:
        raise CapabilityError("the second-order condition needs the envelope V")
    if method == "closed":
        p = _closed_params(problem.spec, problem.sys)
        log_pi = lambda s: closed_form_log_pi(p["M"], p["nu"], p["zeta"], p["eps2"], tau, s)  # noqa: E731
    else:
        log_pi = ledger.log_pi

    def g(s):
        s = np.asarray(s, float)
        first = _log_khx(problem, problem.nl.v_env, s) + log_pi(s)
        second = _log_khx(problem, problem.nl.V_env, s) + 2 * ledger.exponent(s)
        return np.exp(np.logaddexp(first, second))

    return g


def verify_second_order_condition(problem: ConjugacyProblem, tau: float, method: str = "auto") -> SecondOrderCondition:
    """Finiteness of int_tau^oo K h {pi v + V Psi^2} ds, judged by the integrand's decay."""
    tau = float(tau)
    method = _resolve_method(method, problem.spec)
    g = _second_order_integrand(problem, tau, method)
    st = problem.settings
    res = integrate_decaying(g, tau, st.quad_tol, span=st.horizon_cap)
    value = res.value + res.tail_estimate if res.finite else float("inf")
    return SecondOrderCondition(bool(res.finite), float(value), float(res.rate), float(res.horizon), method)


@dataclass(frozen=True)
class DerivativeIntegral:
    value: np.ndarray
    error: float
    tail_bound: float
    horizon: float
    certified: bool = True


def _variational_horizon(problem: ConjugacyProblem, tau: float, env: TailEnvelope | None) -> tuple[float, float, bool]:
    st = problem.settings
    if env is None:
        return 0.0, 0.0, True
    try:
        T, tail = choose_horizon(env, st.quad_tol, max(tau, st.horizon_min), max(st.horizon_cap, 2 * tau))
        return T, tail, True
    except TruncationError:
        return 4 * max(tau, st.horizon_min), float("inf"), False


def dw_star_detail(problem: ConjugacyProblem, tau: float, eta) -> DerivativeIntegral:
    d = problem.dimension
    tau = float(tau)
    eta = np.asarray(eta, float).reshape(d)
    df = problem.nl.require_df()
    if not problem.spec.has_unstable:
        # the kernel at time zero vanishes for s > 0
        return DerivativeIntegral(np.zeros((d, d)), 0.0, 0.0, 0.0)
    spec, nl = problem.spec, problem.nl
    ledger = BoundLedger(problem.sys, nl, tau)
    env = TailEnvelope(lambda s: 2 * spec.K(s) * spec.h(s) * nl.v_env(s) * ledger.psi(s), start=tau)
    T, _, certified = _variational_horizon(problem, tau, env)
    vf = variational_flow(problem.sys, nl, tau, eta, [0.0, T], order=1, settings=problem.settings)

    def g(s):
        G = problem.kernel(np.zeros_like(s), s)
        J = df(s, vf.y(s))
        return -np.einsum("nij,njk,nkl->nil", G, J, vf.z(s))

    res = _integrate(problem, g, env if certified else None, T)
    return DerivativeIntegral(np.asarray(res.value, float), res.error,
                              res.tail_bound if certified else float("inf"), res.horizon, certified)


def _integrate(problem: ConjugacyProblem, g, env, T):
    st = problem.settings
    if env is None:
        # fixed horizon, no certified tail
        return integrate_half_line(g, T, None, st.quad_tol)
    return integrate_half_line(g, 0.0, env, st.quad_tol, horizon=T)


def dw_star(problem: ConjugacyProblem, tau: float, eta) -> np.ndarray:
    """d w(0; tau, eta) / d eta."""
    return dw_star_detail(problem, tau, eta).value


def dG(problem: ConjugacyProblem, tau: float, eta) -> np.ndarray:
    """dG/deta(tau, eta) = X(tau, 0) [dy/deta(0, tau, eta) + dw(0; tau, eta)]."""
    tau = float(tau)
    eta = np.asarray(eta, float).reshape(problem.dimension)
    problem.nl.require_df()
    z0 = variational_flow(problem.sys, problem.nl, tau, eta, [0.0], 1, problem.settings).z(0.0)
    return problem.flow.forward(tau) @ (z0 + dw_star(problem, tau, eta))


def dH(problem: ConjugacyProblem, tau: float, xi, max_condition: float = 1e12) -> np.ndarray:
    """dH/dxi(tau, xi) as the inverse of dG at H(tau, xi)."""
    Hv = H_map(problem, tau, xi).value
    M = dG(problem, tau, Hv)
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularityError(cond)
    return np.linalg.inv(M)


def d2w_star_detail(problem: ConjugacyProblem, tau: float, eta, method: str = "auto") -> DerivativeIntegral:
    d = problem.dimension
    tau = float(tau)
    eta = np.asarray(eta, float).reshape(d)
    nl = problem.nl
    df, d2f = nl.require_df(), nl.require_d2f()
    if nl.V_env is None:
        raise CapabilityError("second derivatives need the envelope V")
    method = _resolve_method(method, problem.spec)
    certified = verify_second_order_condition(problem, tau, method).passed
    if not problem.spec.has_unstable:
        return DerivativeIntegral(np.zeros((d, d, d)), 0.0, 0.0, 0.0, certified)
    env = None
    if certified:
        g_env = _second_order_integrand(problem, tau, method)
        env = TailEnvelope(g_env, start=tau)
    T, tail, ok = _variational_horizon(problem, tau, env) if env is not None else (
        4 * max(tau, problem.settings.horizon_min), float("inf"), False)
    certified = certified and ok
    vf = variational_flow(problem.sys, nl, tau, eta, [0.0, T], order=2, settings=problem.settings)

    def g(s):
        G = problem.kernel(np.zeros_like(s), s)
        y, z, w = vf.y(s), vf.z(s), vf.w(s)
        inner = np.einsum("nij,njab->niab", df(s, y), w) + np.einsum("nijk,nja,nkb->niab", d2f(s, y), z, z)
        return -np.einsum("nij,njab->niab", G, inner)

    res = _integrate(problem, g, env if certified else None, T)
    return DerivativeIntegral(np.asarray(res.value, float), res.error,
                              res.tail_bound if certified else float("inf"), res.horizon, certified)


def d2w_star(problem: ConjugacyProblem, tau: float, eta, method: str = "auto") -> np.ndarray:
    """d^2 w(0; tau, eta) / d eta^2 as a ``(d, d, d)`` array; warns when uncertified."""
    res = d2w_star_detail(problem, tau, eta, method)
    if not res.certified:
        warnings.warn("second-order integrability condition not certified at this tau; "
                      "the second derivative is uncertified", HypothesisWarning, stacklevel=2)
    return res.value


@dataclass(frozen=True)
class DerivativeBundle:
    dG: np.ndarray
    dH: np.ndarray
    dw: np.ndarray
    condition_number: float
    d2w: np.ndarray | None = None
    d2w_certified: bool | None = None


def derivative_bundle(problem: ConjugacyProblem, tau: float, point, second: bool = False) -> DerivativeBundle:
    """dG at (tau, point), dH at (tau, point) and the corrections' derivatives."""
    tau = float(tau)
    point = np.asarray(point, float).reshape(problem.dimension)
    dG_val = dG(problem, tau, point)
    Hv = H_map(problem, tau, point).value
    M = dG(problem, tau, Hv)
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularityError(cond)
    d2 = d2w_star_detail(problem, tau, point) if second else None
    return DerivativeBundle(
        dG=dG_val,
        dH=np.linalg.inv(M),
        dw=dw_star(problem, tau, point),
        condition_number=cond,
        d2w=None if d2 is None else d2.value,
        d2w_certified=None if d2 is None else d2.certified,
    )


def central_difference(fn: Callable[[np.ndarray], np.ndarray], x, delta: float) -> np.ndarray:
    """Jacobian of ``fn`` at ``x`` by central differences; derivative index last."""
    x = np.asarray(x, float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = delta
        cols.append((np.asarray(fn(x + e), float) - np.asarray(fn(x - e), float)) / (2 * delta))
    return np.stack(cols, axis=-1)


def relative_error(a, b, floor: float = 1e-12) -> float:
    """|a - b| / max(|b|, floor) in the Frobenius norm."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(float(np.linalg.norm(b)), floor))
