"""The conjugating maps between the linear and the perturbed system.

``G(t, eta) = eta + w(t; t, eta)`` where ``w`` is a Green-kernel integral
along the perturbed solution through (t, eta), and ``H(t, xi) = xi + z(t)``
where ``z`` is the fixed point of the integral operator

    T(phi)(t) = int_0^oo Green(t, s) f(s, x(s) + phi(s)) ds

along the linear solution x through (tau, xi).  The operator is discretised
on a panel grid; every panel carries a 15-point Kronrod rule, and the
kernel is factored as Phi(t) P0 Phi^-1(s) (resp. Q0) so one pass of
cumulative sums evaluates T(phi) at all grid nodes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .dichotomy import DichotomySpec, VerificationReport, greens_kernel, verify_c2_c3
from .flows import LinearFlow, LinearSystemSpec, NonlinearitySpec, opnorm, solve_nonlinear
from .quadrature import TailEnvelope, adaptive_integral, choose_horizon, gk15_rule, integrate_half_line
from .settings import DEFAULT, Settings

__all__ = [
    "ContractionError",
    "ConvergenceError",
    "HypothesisWarning",
    "ConjugacyProblem",
    "GridFunction",
    "ConvergenceStats",
    "ConjugacyResult",
    "w_star",
    "w_star_detail",
    "working_grid",
    "apply_T",
    "z_star",
    "H_map",
    "G_map",
    "G_map_via_origin",
    "check_equivalence",
]

_NODES, _KW, _GW = gk15_rule()


class ContractionError(RuntimeError):
    """The integral operator is not certified (or observed) to be a contraction."""


class ConvergenceError(RuntimeError):
    """Picard iteration hit its iteration cap."""


class HypothesisWarning(UserWarning):
    """A hypothesis behind a construction is unverified or failed."""


class ConjugacyProblem:
    """A linear system, its dichotomy and a perturbation, with shared caches.

    The fundamental-matrix cache and the measured constants p_hat / q_hat
    are computed once and reused by every map evaluation.
    """

    def __init__(
        self,
        sys: LinearSystemSpec,
        spec: DichotomySpec,
        nl: NonlinearitySpec,
        settings: Settings = DEFAULT,
        hypotheses: VerificationReport | None = None,
    ):
        if spec.dimension != sys.dimension:
            raise ValueError("projector and system dimensions differ")
        self.sys = sys
        self.spec = spec
        self.nl = nl
        self.settings = settings
        self.flow = LinearFlow(sys, settings, horizon=2 * settings.horizon_min)
        self._hypotheses = hypotheses

    @property
    def dimension(self) -> int:
        return self.sys.dimension

    @property
    def hypotheses(self) -> VerificationReport:
        if self._hypotheses is None:
            self._hypotheses = verify_c2_c3(self.spec, self.sys, self.nl, None, self.settings, self.flow)
        return self._hypotheses

    @property
    def p_hat(self) -> float:
        return float(self.hypotheses.p_hat)

    @property
    def q_hat(self) -> float:
        return float(self.hypotheses.q_hat)

    def with_settings(self, settings: Settings) -> "ConjugacyProblem":
        return ConjugacyProblem(self.sys, self.spec, self.nl, settings)

    def require_contraction(self) -> float:
        q = self.hypotheses.q_hat
        if q is None or not self.hypotheses.passed.get("c3", False) or not q < 1:
            raise ContractionError(f"measured contraction constant q_hat={q} is not below 1")
        return float(q)

    def kernel(self, t, s) -> np.ndarray:
        return greens_kernel(self.spec, self.flow, t, s)

    def linear_solution(self, s, tau: float, xi) -> np.ndarray:
        """x(s, tau, xi) = X(s, tau) xi at an array of times."""
        c = self.flow.backward(float(tau)) @ np.asarray(xi, float).reshape(self.dimension)
        return self.flow.forward(s) @ c

    def decay_weight(self, s) -> np.ndarray:
        s = np.asarray(s, float)
        return np.asarray(self.spec.K(s) * self.spec.h(s) * self.nl.u_env(s), float)


# --------------------------------------------------------------------------- G


@dataclass(frozen=True)
class CorrectionIntegral:
    value: np.ndarray
    error: float
    tail_bound: float
    horizon: float


def w_star_detail(problem: ConjugacyProblem, t: float, tau: float, eta) -> CorrectionIntegral:
    """w(t; tau, eta) with its quadrature error and certified tail."""
    st = problem.settings
    spec, nl = problem.spec, problem.nl
    t, tau = float(t), float(tau)
    eta = np.asarray(eta, float).reshape(problem.dimension)
    if nl.is_zero:
        return CorrectionIntegral(np.zeros(problem.dimension), 0.0, 0.0, t)
    env = None
    horizon = t
    if spec.has_unstable:
        ht = float(spec.h(np.array([t]))[0])
        env = TailEnvelope(lambda s: spec.K(s) * spec.h(s) * nl.u_env(s) / ht, start=t)
        horizon, _ = choose_horizon(env, st.quad_tol, max(t, st.horizon_min), max(st.horizon_cap, 2 * t))
    y = solve_nonlinear(problem.sys, nl, tau, eta, [0.0, horizon, t], st)

    def g(s):
        ys = y(s)
        G = problem.kernel(np.full_like(s, t), s)
        return -np.einsum("nij,nj->ni", G, nl.f(s, ys))

    res = integrate_half_line(g, t, env, st.quad_tol, horizon=horizon if env is not None else None)
    return CorrectionIntegral(np.asarray(res.value, float), res.error, res.tail_bound, res.horizon)


def w_star(problem: ConjugacyProblem, t: float, tau: float, eta) -> np.ndarray:
    """-int_0^oo Green(t, s) f(s, y(s, tau, eta)) ds."""
    return w_star_detail(problem, t, tau, eta).value


@dataclass(frozen=True)
class ConjugacyResult:
    value: np.ndarray
    correction: np.ndarray
    iterations: int
    residual: float
    tail_bound: float
    error_bound: float
    bounded: bool | None = None
    stats: "ConvergenceStats | None" = None


def _error_allowance(settings: Settings, correction: np.ndarray) -> float:
    # integration error of the underlying flows, to first order
    return settings.rtol * float(np.linalg.norm(correction)) + settings.atol


def _warn_c2(problem: ConjugacyProblem) -> None:
    hyp = problem.hypotheses
    if not hyp.passed.get("c2", False):
        warnings.warn("size-envelope integral (c2) is not verified", HypothesisWarning, stacklevel=3)


def G_map(problem: ConjugacyProblem, t: float, eta) -> ConjugacyResult:
    """G(t, eta) = eta + w(t; t, eta)."""
    _warn_c2(problem)
    eta = np.asarray(eta, float).reshape(problem.dimension)
    w = w_star_detail(problem, t, t, eta)
    value = eta + w.value
    residual = w.error + w.tail_bound
    bounded = bool(np.linalg.norm(w.value) <= problem.p_hat + residual + problem.settings.quad_tol)
    return ConjugacyResult(
        value=value,
        correction=w.value,
        iterations=0,
        residual=residual,
        tail_bound=w.tail_bound,
        error_bound=residual + _error_allowance(problem.settings, w.value),
        bounded=bounded,
    )


def G_map_via_origin(problem: ConjugacyProblem, tau: float, eta) -> np.ndarray:
    """X(tau, 0) [y(0, tau, eta) + w(0; tau, eta)], the second route to G."""
    eta = np.asarray(eta, float).reshape(problem.dimension)
    y0 = solve_nonlinear(problem.sys, problem.nl, tau, eta, [0.0], problem.settings)(0.0)
    w0 = w_star(problem, 0.0, tau, eta)
    return problem.flow.forward(float(tau)) @ (y0 + w0)


# --------------------------------------------------------------------------- H


class GridFunction:
    """Vector samples on an increasing grid with a piecewise-cubic interpolant.

    Beyond the last node the function is continued by ``decay`` scaled to
    match the last sample.  The sup norm is taken over nodes.
    """

    def __init__(self, nodes, values, derivs=None, decay=None):
        nodes = np.asarray(nodes, float)
        values = np.asarray(values, float)
        if nodes.ndim != 1 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if values.shape[0] != len(nodes):
            raise ValueError("one value per node is required")
        self.nodes = nodes
        self.values = values
        self.derivs = None if derivs is None else np.asarray(derivs, float)
        self.decay = decay
        if len(nodes) == 1:
            self._interp = None
        elif self.derivs is not None:
            self._interp = CubicHermiteSpline(nodes, values, self.derivs, axis=0)
        else:
            self._interp = CubicSpline(nodes, values, axis=0)

    @classmethod
    def zeros(cls, nodes, dimension: int, decay=None) -> "GridFunction":
        nodes = np.asarray(nodes, float)
        z = np.zeros((len(nodes), dimension))
        return cls(nodes, z, z.copy(), decay)

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, float)
        flat = np.atleast_1d(s).ravel()
        if np.any(flat < self.nodes[0]):
            raise ValueError("evaluation below the first grid node")
        d = self.values.shape[1]
        out = np.empty((len(flat), d))
        inside = flat <= self.nodes[-1]
        if self._interp is None:
            out[inside] = self.values[0]
        else:
            out[inside] = self._interp(flat[inside])
        idx = np.clip(np.searchsorted(self.nodes, flat), 0, len(self.nodes) - 1)
        hit = self.nodes[idx] == flat
        out[hit] = self.values[idx[hit]]
        if np.any(~inside):
            out[~inside] = self._extend(flat[~inside])
        return out.reshape(s.shape + (d,))

    def _extend(self, s) -> np.ndarray:
        last = self.values[-1]
        if self.decay is None:
            return np.zeros((len(s), len(last)))
        w_end = float(self.decay(np.array([self.horizon]))[0])
        if w_end <= 0:
            return np.zeros((len(s), len(last)))
        return (np.asarray(self.decay(s), float) / w_end)[:, None] * last[None, :]

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def distance(self, other: "GridFunction") -> float:
        if len(other.nodes) == len(self.nodes) and np.array_equal(other.nodes, self.nodes):
            diff = self.values - other.values
        else:
            diff = self.values - other(self.nodes)
        return float(np.max(np.linalg.norm(diff, axis=1)))


@dataclass
class ConvergenceStats:
    iterations: int
    diffs: list[float]
    ratios: list[float]
    residual: float
    quadrature_error: float
    tail_bound: float
    q_hat: float
    q_used: float
    error_bound: float
    n_nodes: int
    refinements: int = 0

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0


def working_grid(tau: float, spacing: float, horizon_min: float, extra: Sequence[float] = ()) -> np.ndarray:
    """Uniform nodes on [0, max(2 tau, horizon_min)] plus tau and any extra nodes."""
    extra = [float(e) for e in extra]
    T = max(2.0 * tau, horizon_min, *(2.0 * e for e in extra)) if extra else max(2.0 * tau, horizon_min)
    n = max(1, int(math.ceil(T / spacing - 1e-9)))
    base = np.linspace(0.0, n * spacing, n + 1)
    nodes = np.union1d(base, [float(tau), *extra])
    # merge nodes closer than a tiny fraction of the spacing
    keep = np.concatenate([[True], np.diff(nodes) > 1e-9 * spacing])
    special = np.isin(nodes, [float(tau), *extra])
    return nodes[keep | special]


class _Discretisation:
    """Precomputed kernel factors for T on a fixed node grid."""

    def __init__(self, problem: ConjugacyProblem, tau: float, xi: np.ndarray, nodes: np.ndarray):
        st = problem.settings
        self.problem = problem
        self.nodes = nodes
        d = problem.dimension
        self.d = d
        a, b = nodes[:-1], nodes[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        self.n_panels = len(a)
        s = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
        self.s = s
        self.wk = (half[:, None] * _KW[None, :]).ravel()
        self.wg = (half[:, None] * _GW[None, :]).ravel()
        flow = problem.flow
        flow.ensure(nodes[-1])
        c = flow.backward(float(tau)) @ xi
        self.c = c
        Psi = flow.backward(s)
        self.x_s = flow.forward(s) @ c
        self.Phi_nodes = flow.forward(nodes)
        self.x_nodes = self.Phi_nodes @ c
        self.A_nodes = problem.sys.A_many(nodes)
        P0, Q0 = problem.spec.P0, problem.spec.Q0
        self.PPsi = P0 @ Psi
        self.nPhiP = opnorm(self.Phi_nodes @ P0)
        v_s = np.asarray(problem.nl.v_env(s), float)
        # per-panel mass of |P0 Phi^-1(s)| v(s): converts an interpolation
        # error of phi into an error of the panel integral
        self.massP = (self.wk * opnorm(self.PPsi) * v_s).reshape(-1, 15).sum(axis=1)
        self.unstable = problem.spec.has_unstable
        self.tail_bound = 0.0
        if self.unstable:
            self.QPsi = Q0 @ Psi
            self.nPhiQ = opnorm(self.Phi_nodes @ Q0)
            self.massQ = (self.wk * opnorm(self.QPsi) * v_s).reshape(-1, 15).sum(axis=1)
            T_w = float(nodes[-1])
            self.tail_tol = st.quad_tol / max(1.0, float(self.nPhiQ.max()))
            env = TailEnvelope(problem.decay_weight, start=T_w)
            self.tail_end, self.tail_bound = choose_horizon(
                env, self.tail_tol, T_w, max(st.horizon_cap, 4 * T_w)
            )
            flow.ensure(self.tail_end)
            self.tail_edges = np.linspace(T_w, self.tail_end, 9)

    def _integrand(self, phi: GridFunction) -> np.ndarray:
        return self.problem.nl.f(self.s, self.x_s + phi(self.s))

    def interpolation_error(self, phi: GridFunction) -> np.ndarray:
        """Per-panel estimate of the cubic interpolation error of ``phi``.

        Compares the interpolant with one built on every other node; for a
        fourth-order rule the fine error is about 1/15 of the difference.
        """
        n = len(phi.nodes)
        if n < 5 or not np.array_equal(phi.nodes, self.nodes):
            return np.zeros(self.n_panels)
        idx = np.arange(0, n, 2)
        if idx[-1] != n - 1:
            idx = np.append(idx, n - 1)
        if phi.derivs is not None:
            coarse = CubicHermiteSpline(phi.nodes[idx], phi.values[idx], phi.derivs[idx], axis=0)
        else:
            coarse = CubicSpline(phi.nodes[idx], phi.values[idx], axis=0)
        diff = np.linalg.norm(phi(self.s) - coarse(self.s), axis=1) / 15.0
        return diff.reshape(self.n_panels, 15).max(axis=1)

    def interpolation_influence(self, phi: GridFunction) -> tuple[np.ndarray, np.ndarray | None]:
        e = self.interpolation_error(phi)
        return e * self.massP, (e * self.massQ if self.unstable else None)

    def apply(self, phi: GridFunction):
        """T(phi) on the nodes, per-node error estimate and per-panel influence.

        The error covers the Kronrod-Gauss difference on every panel, the
        interpolation error of ``phi`` and the truncated tail.
        """
        d, N = self.d, self.n_panels
        g = self._integrand(phi)
        iP, iQ = self.interpolation_influence(phi)
        vP = np.einsum("mij,mj->mi", self.PPsi, g)
        JP = (self.wk[:, None] * vP).reshape(N, 15, d).sum(axis=1)
        eP = np.linalg.norm(((self.wk - self.wg)[:, None] * vP).reshape(N, 15, d).sum(axis=1), axis=1) + iP
        inner = np.vstack([np.zeros(d), np.cumsum(JP, axis=0)])
        errP = np.concatenate([[0.0], np.cumsum(eP)])
        node_err = self.nPhiP * errP
        # influence of each panel on the worst node it feeds
        inflP = eP * _suffix_max(self.nPhiP[1:])
        influence = inflP
        tail_err = 0.0
        if self.unstable:
            vQ = np.einsum("mij,mj->mi", self.QPsi, g)
            JQ = (self.wk[:, None] * vQ).reshape(N, 15, d).sum(axis=1)
            eQ = np.linalg.norm(((self.wk - self.wg)[:, None] * vQ).reshape(N, 15, d).sum(axis=1), axis=1) + iQ
            tail_val, tail_err = self._tail(phi)
            revQ = np.vstack([np.cumsum(JQ[::-1], axis=0)[::-1], np.zeros(d)]) + tail_val
            inner = inner - revQ
            errQ = np.concatenate([np.cumsum(eQ[::-1])[::-1], [0.0]]) + tail_err + self.tail_bound
            node_err = node_err + self.nPhiQ * errQ
            influence = influence + eQ * _prefix_max(self.nPhiQ[:-1])
        values = np.einsum("nij,nj->ni", self.Phi_nodes, inner)
        derivs = np.einsum("nij,nj->ni", self.A_nodes, values) + self.problem.nl.f(
            self.nodes, self.x_nodes + phi(self.nodes)
        )
        out = GridFunction(self.nodes, values, derivs, decay=self.problem.decay_weight)
        return out, float(node_err.max()), influence

    def _tail(self, phi: GridFunction):
        problem = self.problem

        def g(s):
            x = problem.linear_solution(s, 0.0, self.c)
            return np.einsum(
                "nij,nj->ni", problem.spec.Q0 @ problem.flow.backward(s), problem.nl.f(s, x + phi(s))
            )

        value, err, _ = adaptive_integral(g, self.tail_edges, self.tail_tol)
        return np.asarray(value, float), err


def _panel_total(disc: _Discretisation, fn: GridFunction) -> np.ndarray:
    """Interpolation influence of ``fn`` per panel, weighted by the nodes it feeds."""
    iP, iQ = disc.interpolation_influence(fn)
    total = iP * _suffix_max(disc.nPhiP[1:])
    if iQ is not None:
        total = total + iQ * _prefix_max(disc.nPhiQ[:-1])
    return total


def _startup_influence(disc: _Discretisation, fn: GridFunction, infl: np.ndarray) -> float:
    return float(infl.sum() + _panel_total(disc, fn).sum())


def _suffix_max(a: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(a[::-1])[::-1]


def _prefix_max(a: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(a)


def _refine(nodes: np.ndarray, influence: np.ndarray, tol: float) -> np.ndarray:
    width = np.diff(nodes)
    share = tol * width / (nodes[-1] - nodes[0])
    bad = influence > share
    if not bad.any():
        bad = influence == influence.max()
    mids = 0.5 * (nodes[:-1][bad] + nodes[1:][bad])
    return np.union1d(nodes, mids)


def apply_T(problem: ConjugacyProblem, phi: GridFunction, tau: float, xi) -> GridFunction:
    """One application of the integral operator, sampled on ``phi``'s nodes."""
    xi = np.asarray(xi, float).reshape(problem.dimension)
    disc = _Discretisation(problem, float(tau), xi, phi.nodes)
    return disc.apply(phi)[0]


def z_star(
    problem: ConjugacyProblem,
    tau: float,
    xi,
    extra_nodes: Sequence[float] = (),
    max_refinements: int = 6,
) -> tuple[GridFunction, ConvergenceStats]:
    """Fixed point of T by Picard iteration from zero.

    Stops once successive iterates differ by at most fp_tol (1 - q) / q in
    the node sup norm, with q the measured contraction constant floored at
    ``settings.q_floor``; the distance to the true fixed point is then at
    most fp_tol.  Three consecutive ratios of at least one raise
    ``ContractionError``.
    """
    st = problem.settings
    q_hat = problem.require_contraction()
    q = max(q_hat, st.q_floor)
    stop = st.fp_tol * (1 - q) / q
    tau = float(tau)
    xi = np.asarray(xi, float).reshape(problem.dimension)
    d = problem.dimension
    nodes = working_grid(tau, st.grid_spacing, st.horizon_min, extra_nodes)
    disc = _Discretisation(problem, tau, xi, nodes)
    phi = GridFunction.zeros(nodes, d, problem.decay_weight)

    refinements = 0
    new, q_err, infl = disc.apply(phi)
    while _startup_influence(disc, new, infl) > st.quad_tol and refinements < max_refinements:
        infl = infl + _panel_total(disc, new)
        nodes = _refine(nodes, infl, st.quad_tol)
        disc = _Discretisation(problem, tau, xi, nodes)
        phi = GridFunction.zeros(nodes, d, problem.decay_weight)
        new, q_err, infl = disc.apply(phi)
        refinements += 1

    diffs: list[float] = []
    ratios: list[float] = []
    growth = 0
    iterations = 1
    while True:
        diff = new.distance(phi)
        if diffs and diffs[-1] > 1e3 * np.finfo(float).eps * max(1.0, new.sup_norm()):
            r = diff / diffs[-1]
            ratios.append(r)
            growth = growth + 1 if r >= 1 else 0
            if growth >= 3:
                raise ContractionError(f"Picard ratio >= 1 for 3 consecutive iterations (last {r:.3g})")
        diffs.append(diff)
        phi = new
        if diff <= stop:
            if infl.sum() > st.quad_tol and refinements < max_refinements:
                # the converged integrand needs a finer grid: refine and continue
                nodes = _refine(nodes, infl, st.quad_tol)
                disc = _Discretisation(problem, tau, xi, nodes)
                phi = GridFunction(nodes, phi(nodes), None, problem.decay_weight)
                refinements += 1
            else:
                break
        if iterations >= st.max_iter:
            raise ConvergenceError(f"no convergence after {iterations} iterations (last diff {diff:.3e})")
        new, q_err, infl = disc.apply(phi)
        iterations += 1

    residual = diffs[-1]
    error_bound = q / (1 - q) * residual + q_err
    stats = ConvergenceStats(
        iterations=iterations,
        diffs=diffs,
        ratios=ratios,
        residual=residual,
        quadrature_error=q_err,
        tail_bound=disc.tail_bound,
        q_hat=q_hat,
        q_used=q,
        error_bound=error_bound,
        n_nodes=len(nodes),
        refinements=refinements,
    )
    return phi, stats


def H_map(problem: ConjugacyProblem, t: float, xi) -> ConjugacyResult:
    """H(t, xi) = xi + z(t), z the fixed point along the linear solution through (t, xi)."""
    t = float(t)
    xi = np.asarray(xi, float).reshape(problem.dimension)
    z, stats = z_star(problem, t, xi, extra_nodes=[t])
    corr = z(np.array([t]))[0]
    bound = stats.error_bound + _error_allowance(problem.settings, corr)
    bounded = bool(np.linalg.norm(corr) <= problem.p_hat + bound)
    return ConjugacyResult(
        value=xi + corr,
        correction=corr,
        iterations=stats.iterations,
        residual=stats.residual,
        tail_bound=stats.tail_bound,
        error_bound=bound,
        bounded=bounded,
        stats=stats,
    )


# --------------------------------------------------------------------------- checks


def check_equivalence(
    problem: ConjugacyProblem,
    tau: float,
    xi,
    eta,
    t_grid,
    tol: float = 1e-5,
) -> VerificationReport:
    """Residuals of the solution-mapping identities, both roundtrips and boundedness."""
    st = problem.settings
    tau = float(tau)
    d = problem.dimension
    xi = np.asarray(xi, float).reshape(d)
    eta = np.asarray(eta, float).reshape(d)
    t_grid = np.atleast_1d(np.asarray(t_grid, float))

    H_tau = H_map(problem, tau, xi)
    G_tau = G_map(problem, tau, eta)
    y_H = solve_nonlinear(problem.sys, problem.nl, tau, H_tau.value, t_grid, st)
    y_eta = solve_nonlinear(problem.sys, problem.nl, tau, eta, t_grid, st)
    x_xi = problem.linear_solution(t_grid, tau, xi)
    x_G = problem.linear_solution(t_grid, tau, G_tau.value)

    res_H, res_G, scale = [], [], 1.0
    corr_H, corr_G = [np.linalg.norm(H_tau.correction)], [np.linalg.norm(G_tau.correction)]
    for k, t in enumerate(t_grid):
        Ht = H_map(problem, t, x_xi[k])
        res_H.append(float(np.linalg.norm(Ht.value - y_H(t))))
        scale = max(scale, float(np.linalg.norm(y_H(t))), float(np.linalg.norm(x_G[k])))
        corr_H.append(float(np.linalg.norm(Ht.correction)))
        Gt = G_map(problem, t, y_eta(t))
        res_G.append(float(np.linalg.norm(Gt.value - x_G[k])))
        corr_G.append(float(np.linalg.norm(Gt.correction)))

    HG = H_map(problem, tau, G_tau.value)
    GH = G_map(problem, tau, H_tau.value)
    round_HG = float(np.linalg.norm(HG.value - eta))
    round_GH = float(np.linalg.norm(GH.value - xi))
    p_hat = problem.p_hat
    margin_H = max(corr_H) - p_hat
    margin_G = max(corr_G) - p_hat
    bound_tol = st.quad_tol * 100

    details = {
        "solution_mapping_H": max(res_H),
        "solution_mapping_G": max(res_G),
        "roundtrip_HG": round_HG,
        "roundtrip_GH": round_GH,
        "bounded_margin_H": margin_H,
        "bounded_margin_G": margin_G,
    }
    passed = {
        # growing solutions carry integrator error proportional to their size
        "solution_mapping_H": details["solution_mapping_H"] <= tol * scale,
        "solution_mapping_G": details["solution_mapping_G"] <= tol * scale,
        "roundtrip_HG": round_HG <= tol,
        "roundtrip_GH": round_GH <= tol,
        "bounded_H": margin_H <= bound_tol,
        "bounded_G": margin_G <= bound_tol,
    }
    return VerificationReport(
        p_hat=p_hat,
        passed=passed,
        details=details,
        meta={
            "tau": tau,
            "t_grid": [float(t_grid.min()), float(t_grid.max()), int(len(t_grid))],
            "identity_tol": tol,
            "solution_mapping_scale": scale,
            "bounded_tol": bound_tol,
            "fp_tol": st.fp_tol,
            "quad_tol": st.quad_tol,
        },
    )
