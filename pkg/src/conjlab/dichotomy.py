"""Dichotomy data and numerical checks of the standing hypotheses.

The checks are named after the conditions they test:

* ``c1``: the dichotomy estimates on the stable and unstable branches,
* ``c2``/``c3``: boundedness of the Green-kernel integrals of the size and
  Lipschitz envelopes (the second supremum must be below one),
* ``c5``: integrability of the Lipschitz envelope against the Gronwall
  growth factor.

``sufficient_conditions`` instantiates the closed-form sufficient conditions
of the exponential and nonuniform exponential settings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .flows import LinearFlow, LinearSystemSpec, NonlinearitySpec, opnorm, transition_matrix
from .quadrature import TailEnvelope, adaptive_integral, integrate_decaying, integrate_half_line
from .settings import DEFAULT, Settings

__all__ = [
    "ConfigurationError",
    "DichotomySpec",
    "VerificationReport",
    "projector_at",
    "greens_operator",
    "greens_kernel",
    "c1_grid",
    "verify_c1",
    "verify_c2_c3",
    "verify_c5",
    "gronwall_exponent",
    "sufficient_conditions",
]


class ConfigurationError(ValueError):
    """Missing or inconsistent parameters."""


@dataclass(frozen=True)
class DichotomySpec:
    P0: np.ndarray
    K: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        if P0.shape[0] != P0.shape[1]:
            raise ConfigurationError("P0 must be square")
        if np.max(np.abs(P0 @ P0 - P0)) > 1e-12:
            raise ConfigurationError("P0 is not a projector (P0 P0 != P0)")
        object.__setattr__(self, "P0", P0)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def dimension(self) -> int:
        return self.P0.shape[0]

    @property
    def Q0(self) -> np.ndarray:
        return np.eye(self.dimension) - self.P0

    @property
    def has_unstable(self) -> bool:
        return bool(np.any(np.abs(self.Q0) > 0))

    def check_h(self, grid=None) -> dict:
        grid = np.linspace(0.0, 20.0, 201) if grid is None else np.asarray(grid, dtype=float)
        hv = np.asarray(self.h(grid), dtype=float)
        return {
            "h0_is_one": bool(abs(float(self.h(np.array([0.0]))[0]) - 1.0) <= 1e-12),
            "in_unit_interval": bool(np.all((hv > 0) & (hv <= 1 + 1e-12))),
            "nonincreasing": bool(np.all(np.diff(hv) <= 1e-15)),
            "final_value": float(hv[-1]),
        }

    def param(self, name: str) -> float:
        try:
            return float(self.params[name])
        except KeyError:
            raise ConfigurationError(f"missing dichotomy parameter {name!r}") from None


@dataclass
class VerificationReport:
    """Measured constants, per-condition verdicts and the grids that produced them."""

    p_hat: float | None = None
    q_hat: float | None = None
    c1_margin: float | None = None
    c5_value: dict[float, float] = field(default_factory=dict)
    passed: dict[str, bool] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        out = VerificationReport(
            p_hat=other.p_hat if other.p_hat is not None else self.p_hat,
            q_hat=other.q_hat if other.q_hat is not None else self.q_hat,
            c1_margin=other.c1_margin if other.c1_margin is not None else self.c1_margin,
            c5_value={**self.c5_value, **other.c5_value},
            passed={**self.passed, **other.passed},
            details={**self.details, **other.details},
            meta={**self.meta, **other.meta},
        )
        return out

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "q_hat": self.q_hat,
            "c1_margin": self.c1_margin,
            "c5_value": {str(k): v for k, v in self.c5_value.items()},
            "passed": dict(self.passed),
            "details": jsonable(self.details),
            "meta": jsonable(self.meta),
        }


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def projector_at(spec: DichotomySpec, sys: LinearSystemSpec, t: float, settings: Settings = DEFAULT) -> np.ndarray:
    """P(t) = X(t,0) P0 X(0,t)."""
    if t == 0:
        return spec.P0.copy()
    return transition_matrix(sys, t, 0.0, settings) @ spec.P0 @ transition_matrix(sys, 0.0, t, settings)


def greens_operator(spec: DichotomySpec, sys: LinearSystemSpec, t: float, s: float, settings: Settings = DEFAULT) -> np.ndarray:
    """The Green kernel at a single (t, s), from direct transition matrices."""
    left = transition_matrix(sys, t, 0.0, settings)
    right = transition_matrix(sys, 0.0, s, settings)
    if t >= s:
        return left @ spec.P0 @ right
    return -(left @ spec.Q0 @ right)


def greens_kernel(spec: DichotomySpec, flow: LinearFlow, t, s) -> np.ndarray:
    """Vectorised Green kernel on broadcast arrays of (t, s)."""
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    Phi = flow.forward(t)
    Psi = flow.backward(s)
    P = Phi @ spec.P0 @ Psi
    if not spec.has_unstable:
        return np.where((t >= s)[..., None, None], P, 0.0)
    Q = Phi @ spec.Q0 @ Psi
    return np.where((t >= s)[..., None, None], P, -Q)


def c1_grid(horizon: float = 10.0, n_base: int = 11, n_gap: int = 12, min_gap: float = 1e-3) -> np.ndarray:
    """(t, s) pairs: base times times log-spaced gaps in both directions, plus the diagonal."""
    base = np.linspace(0.0, horizon, n_base)
    gaps = np.geomspace(min_gap, horizon, n_gap)
    pairs = [(b, b) for b in base]
    for b in base:
        for g in gaps:
            pairs.append((b + g, b))
            pairs.append((b, b + g))
    return np.array(pairs)


def verify_c1(
    spec: DichotomySpec,
    sys: LinearSystemSpec,
    grid=None,
    settings: Settings = DEFAULT,
    flow: LinearFlow | None = None,
    rel_tol: float = 1e-6,
) -> VerificationReport:
    """Worst ratio of the branch norms to the dichotomy envelopes over ``grid``."""
    grid = c1_grid(settings.t_sup) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("c1 grid must be nonempty")
    flow = flow or LinearFlow(sys, settings)
    t, s = grid[:, 0], grid[:, 1]
    Phi, Psi = flow.forward(t), flow.backward(s)
    nP = opnorm(Phi @ spec.P0 @ Psi)
    nQ = opnorm(Phi @ spec.Q0 @ Psi)
    K = np.asarray(spec.K(s), float)
    ht, hs = np.asarray(spec.h(t), float), np.asarray(spec.h(s), float)
    envP = K * ht / hs
    envQ = K * hs / ht
    ratioP = _ratio(nP, envP)
    ratioQ = _ratio(nQ, envQ)
    ratio = np.where(t > s, ratioP, np.where(t < s, ratioQ, np.maximum(ratioP, ratioQ)))
    worst = int(np.argmax(ratio))
    margin = float(ratio[worst])
    return VerificationReport(
        c1_margin=margin,
        passed={"c1": bool(margin <= 1 + rel_tol)},
        details={"c1_worst_point": [float(t[worst]), float(s[worst])]},
        meta={"c1_grid_size": int(len(grid)), "c1_rel_tol": rel_tol, "c1_t_range": [float(grid.min()), float(grid.max())]},
    )


def _ratio(num, den):
    num = np.asarray(num, float)
    den = np.asarray(den, float)
    tiny = num <= 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    return np.where(tiny, 0.0, np.where(den > 0, r, np.inf))


def verify_c2_c3(
    spec: DichotomySpec,
    sys: LinearSystemSpec,
    nl: NonlinearitySpec,
    t_grid=None,
    settings: Settings = DEFAULT,
    flow: LinearFlow | None = None,
) -> VerificationReport:
    """Suprema over ``t_grid`` of the kernel integrals of the size and Lipschitz envelopes."""
    t_grid = np.linspace(0.0, settings.t_sup, settings.n_sup) if t_grid is None else np.atleast_1d(np.asarray(t_grid, float))
    if t_grid.size == 0:
        raise ValueError("t_grid must be nonempty")
    flow = flow or LinearFlow(sys, settings)
    p_vals, q_vals, tails = [], [], []
    for t in t_grid:
        t = float(t)
        Phi_t = flow.forward(t)

        def g(s, t=t, Phi_t=Phi_t):
            G = greens_kernel(spec, flow, np.full_like(s, t), s)
            n = opnorm(G)
            return np.stack([n * nl.u_env(s), n * nl.v_env(s)], axis=-1)

        env = None
        if spec.has_unstable:
            ht = float(spec.h(np.array([t]))[0])

            def bound(s, ht=ht):
                return spec.K(s) * spec.h(s) * np.maximum(nl.u_env(s), nl.v_env(s)) / ht

            env = TailEnvelope(bound, start=t)
        res = integrate_half_line(
            g, t, env, settings.quad_tol, min_horizon=settings.horizon_min, cap=settings.horizon_cap
        )
        p_vals.append(float(res.value[0]))
        q_vals.append(float(res.value[1]))
        tails.append(res.tail_bound + res.error)
    p_vals, q_vals = np.array(p_vals), np.array(q_vals)
    p_hat, q_hat = float(p_vals.max()), float(q_vals.max())
    return VerificationReport(
        p_hat=p_hat,
        q_hat=q_hat,
        passed={"c2": bool(np.isfinite(p_hat)), "c3": bool(q_hat < 1)},
        details={
            "c2_argmax_t": float(t_grid[np.argmax(p_vals)]),
            "c3_argmax_t": float(t_grid[np.argmax(q_vals)]),
            "c2_last": float(p_vals[-1]),
            "c3_last": float(q_vals[-1]),
            "c2_c3_max_quadrature_error": float(max(tails)),
        },
        meta={
            "c2_c3_t_grid": [float(t_grid[0]), float(t_grid[-1]), int(len(t_grid))],
            "quad_tol": settings.quad_tol,
        },
    )


def gronwall_exponent(sys: LinearSystemSpec, nl: NonlinearitySpec, tau: float, s, tol: float = 1e-12) -> np.ndarray:
    """Integral of |A(r)| + v(r) over [tau, s] for each s (s >= tau)."""
    s = np.atleast_1d(np.asarray(s, float))
    if np.any(s < tau):
        raise ValueError("gronwall_exponent needs s >= tau")
    order = np.argsort(s)
    edges = np.concatenate([[tau], s[order]])

    def rate(r):
        return opnorm(sys.A_many(r)) + nl.v_env(r)

    pieces = [adaptive_integral(rate, [a, b], tol)[0] if b > a else 0.0 for a, b in zip(edges[:-1], edges[1:])]
    out = np.empty_like(s)
    out[order] = np.cumsum(pieces)
    return out


def verify_c5(
    spec: DichotomySpec,
    sys: LinearSystemSpec,
    nl: NonlinearitySpec,
    taus=(0.0,),
    settings: Settings = DEFAULT,
) -> VerificationReport:
    """Integral of K h v exp(gronwall) from each tau; growth of the integrand is a failure."""
    values: dict[float, float] = {}
    rates: dict[float, float] = {}
    ok = True
    for tau in np.atleast_1d(np.asarray(taus, float)):
        tau = float(tau)
        ledger = _ExponentLedger(sys, nl, tau)

        def g(s):
            return spec.K(s) * spec.h(s) * nl.v_env(s) * np.exp(ledger(s))

        res = integrate_decaying(g, tau, settings.quad_tol, span=settings.horizon_cap)
        values[tau] = float(res.value + res.tail_estimate) if res.finite else float("inf")
        rates[tau] = float(res.rate)
        ok = ok and res.finite
    return VerificationReport(
        c5_value=values,
        passed={"c5": ok},
        details={"c5_log_slope": rates},
        meta={"c5_taus": list(values), "c5_span": settings.horizon_cap},
    )


class _ExponentLedger:
    """Lazily tabulated Gronwall exponent from a fixed tau, extended on demand."""

    def __init__(self, sys, nl, tau, step: float = 0.05):
        self.sys, self.nl, self.tau, self.step = sys, nl, float(tau), step
        self._grid = np.array([self.tau])
        self._vals = np.array([0.0])

    def _extend(self, upto: float) -> None:
        start = self._grid[-1]
        n = max(1, int(math.ceil((upto - start) / self.step)))
        new = start + self.step * np.arange(1, n + 1)
        inc = gronwall_exponent(self.sys, self.nl, start, new)
        self._grid = np.concatenate([self._grid, new])
        self._vals = np.concatenate([self._vals, self._vals[-1] + inc])

    def __call__(self, s):
        s = np.asarray(s, float)
        if s.size and s.max() > self._grid[-1]:
            self._extend(float(s.max()))
        # nodes are exact; linear in between
        return np.interp(s, self._grid, self._vals)


def _require(spec: DichotomySpec, *names: str) -> dict[str, float]:
    return {n: spec.param(n) for n in names}


def _bound_M(spec: DichotomySpec, sys: LinearSystemSpec) -> float:
    return float(spec.params["M"]) if "M" in spec.params else float(sys.uniform_bound)


def sufficient_conditions(
    spec: DichotomySpec,
    sys: LinearSystemSpec,
    nl: NonlinearitySpec | None = None,
    level: str = "C1",
) -> dict[str, bool]:
    """Closed-form sufficient conditions for the chosen smoothness level.

    ``spec.params['setting']`` selects ``"exponential"`` (constants K, lam, v)
    or ``"nonuniform"`` (C, lam, eps0, eps1, nu, plus eps2 for ``"C2"``).
    """
    setting = spec.params.get("setting")
    if setting is None:
        raise ConfigurationError("missing dichotomy parameter 'setting'")
    M = _bound_M(spec, sys)
    level = level.upper().replace("-SMOOTH", "")
    if level not in ("C1", "C2"):
        raise ValueError(f"unknown level {level!r}")
    if setting == "exponential":
        if level == "C2":
            raise ConfigurationError("the C2 conditions are stated for the nonuniform setting")
        p = _require(spec, "K", "lam", "v")
        return {
            "2Kv<lam": 2 * p["K"] * p["v"] < p["lam"],
            "M+v<lam": M + p["v"] < p["lam"],
        }
    if setting != "nonuniform":
        raise ConfigurationError(f"unknown setting {setting!r}")
    p = _require(spec, "lam", "eps0", "eps1", "nu")
    out = {
        "M<lam": M < p["lam"],
        "nu<lam-M": 0 < p["nu"] < p["lam"] - M,
        "eps0>eps1-lam": p["eps0"] > p["eps1"] - p["lam"],
    }
    if level == "C1":
        return out
    eps2 = spec.param("eps2")
    lam, eps0, eps1 = p["lam"], p["eps0"], p["eps1"]
    if eps0 == eps1 == eps2:
        return {
            "2M<lam": 2 * M < lam,
            "3M<lam+eps": 3 * M < lam + eps2,
            "nu<lam-M": out["nu<lam-M"],
        }
    return {
        **out,
        "3M<lam+eps2": 3 * M < lam + eps2,
        "2M<lam+eps2-eps1": 2 * M < lam + eps2 - eps1,
    }
