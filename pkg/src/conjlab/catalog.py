"""Example systems with closed-form answers and known hypothesis verdicts.

Four entries, each reachable by a long id or a short alias:

========  =====================  =============================================
alias     id                     system
========  =====================  =============================================
S1        scalar-exp-forced      x' = -x,  f = kappa e^{-eps0 t}
S2        saddle-2d-forced       x' = diag(-lam, lam) x,  f = kappa e^{-eps0 t} (1, 1)
S3        scalar-exp-sin         x' = -x,  f = nu e^{-eps1 t} sin(y)
S4        nonuniform-exp         x' = -M x,  K = C e^{eps1 s},  f = nu e^{-eps1 t} sin(y)
========  =====================  =============================================

Every entry accepts the generic modifiers ``unperturbed`` (replace f by
zero), ``u_scale`` and ``v_scale`` (multiply the size / Lipschitz envelopes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .dichotomy import ConfigurationError, DichotomySpec
from .flows import LinearSystemSpec, NonlinearitySpec
from .settings import DEFAULT, Settings

__all__ = ["Expected", "CatalogEntry", "get_entry", "list_entries", "ALIASES"]

ALIASES = {
    "S1": "scalar-exp-forced",
    "S2": "saddle-2d-forced",
    "S3": "scalar-exp-sin",
    "S4": "nonuniform-exp",
}

_GENERIC = {"unperturbed": False, "u_scale": 1.0, "v_scale": 1.0}


@dataclass(frozen=True)
class Expected:
    """A reference value and how it is known.

    ``kind`` is ``"trivial"`` (holds by construction), ``"derived"`` (an
    independent closed form, described in ``oracle``) or ``"reference"``
    (a published inequality or bound, instantiated at the entry's parameters).
    """

    value: Any
    kind: str
    oracle: str = ""

    def __post_init__(self):
        if self.kind not in ("trivial", "derived", "reference"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "derived" and not self.oracle:
            raise ValueError("derived values need an oracle description")


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    params: Mapping[str, Any]
    sys: LinearSystemSpec
    nl: NonlinearitySpec
    spec: DichotomySpec
    expected: Mapping[str, Expected] = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.sys.dimension

    def problem(self, settings: Settings = DEFAULT):
        from .conjugacy import ConjugacyProblem

        return ConjugacyProblem(self.sys, self.spec, self.nl, settings)


def _col(t) -> np.ndarray:
    return np.asarray(t, dtype=float)[..., None]


def _ramp(rate_out: float, rate_in: float, t: float) -> float:
    """int_0^t e^{-rate_out (t - s)} e^{-rate_in s} ds."""
    if math.isclose(rate_out, rate_in):
        return t * math.exp(-rate_out * t)
    return (math.exp(-rate_in * t) - math.exp(-rate_out * t)) / (rate_out - rate_in)


def _ramp_max(rate_out: float, rate_in: float) -> float:
    """Maximum over t >= 0 of ``_ramp``."""
    if rate_in <= 0:
        return 1.0 / rate_out if rate_in == 0 else math.inf
    if math.isclose(rate_out, rate_in):
        t_star = 1.0 / rate_out
    else:
        t_star = math.log(rate_out / rate_in) / (rate_out - rate_in)
    return _ramp(rate_out, rate_in, t_star)


def _sin_nonlinearity(nu: float, eps: float, u_env, v_env, V_env) -> NonlinearitySpec:
    def f(t, u):
        return nu * np.exp(-eps * _col(t)) * np.sin(u)

    def df(t, u):
        return (nu * np.exp(-eps * _col(t)) * np.cos(u))[..., None]

    def d2f(t, u):
        return (-nu * np.exp(-eps * _col(t)) * np.sin(u))[..., None, None]

    return NonlinearitySpec(f=f, df=df, d2f=d2f, u_env=u_env, v_env=v_env, V_env=V_env)


def _forcing(kappa: float, eps: float, d: int, u_norm: float) -> NonlinearitySpec:
    def f(t, u):
        return kappa * np.exp(-eps * _col(t)) + np.zeros_like(np.asarray(u, dtype=float))

    def df(t, u):
        u = np.asarray(u, dtype=float)
        return np.zeros(np.broadcast_shapes(np.shape(t) + (d,), u.shape) + (d,))

    def d2f(t, u):
        u = np.asarray(u, dtype=float)
        return np.zeros(np.broadcast_shapes(np.shape(t) + (d,), u.shape) + (d, d))

    def u_env(s):
        return u_norm * kappa * np.exp(-eps * np.asarray(s, dtype=float))

    zero = lambda s: np.zeros_like(np.asarray(s, dtype=float))  # noqa: E731
    return NonlinearitySpec(f=f, df=df, d2f=d2f, u_env=u_env, v_env=zero, V_env=zero)


def _exp_env(c: float, rate: float) -> Callable:
    return lambda s: c * np.exp(-rate * np.asarray(s, dtype=float))


def _const(c: float) -> Callable:
    return lambda s: np.full_like(np.asarray(s, dtype=float), c)


def _exp_decay(rate: float) -> Callable:
    return lambda t: np.exp(-rate * np.asarray(t, dtype=float))


def _scalar_exp_forced(p: dict):
    kappa, eps0, K = p["kappa"], p["eps0"], p["K"]
    if kappa < 0 or eps0 < 0 or K <= 0:
        raise ConfigurationError("scalar-exp-forced needs kappa >= 0, eps0 >= 0, K > 0")
    sys = LinearSystemSpec(1, lambda t: np.array([[-1.0]]), 1.0)
    nl = _forcing(kappa, eps0, 1, 1.0)
    spec = DichotomySpec(
        np.eye(1), _const(K), _exp_decay(1.0),
        {"setting": "exponential", "K": K, "lam": 1.0, "u": kappa, "v": 0.0, "M": 1.0},
    )
    ramp = kappa * _ramp(1.0, eps0, 1.0)
    oracle = "variation of constants: int_0^t e^{-(t-s)} kappa e^{-eps0 s} ds in closed form"
    expected = {
        "H(1,2)": Expected(2.0 + ramp, "derived", oracle),
        "G(1,2)": Expected(2.0 - ramp, "derived", oracle),
        "w_star(1;1,*)": Expected(-ramp, "derived", oracle),
        "z_star(1)": Expected(ramp, "derived", oracle),
        "p_hat": Expected(kappa * _ramp_max(1.0, eps0), "derived", "maximum over t of the closed-form size integral"),
        "q_hat": Expected(0.0, "trivial", "f does not depend on y"),
        "dG": Expected(np.eye(1), "derived", "dw = 0 and dy/deta(0) = X(0, tau) for y-independent f"),
        "verdicts": Expected(
            {"c1": K >= 1.0, "c2": True, "c3": True, "c5": True},
            "derived",
            "|X(t,s)| = e^{-(t-s)} equals the envelope when K = 1",
        ),
    }
    return sys, nl, spec, expected


def _saddle_2d_forced(p: dict):
    lam, kappa, eps0, K = p["lam"], p["kappa"], p["eps0"], p["K"]
    if lam <= 0 or kappa < 0 or eps0 < 0 or K <= 0:
        raise ConfigurationError("saddle-2d-forced needs lam > 0, kappa >= 0, eps0 >= 0, K > 0")
    A = np.diag([-lam, lam])
    sys = LinearSystemSpec(2, lambda t: A, max(lam, 1.0 / lam))
    nl = _forcing(kappa, eps0, 2, math.sqrt(2.0))
    spec = DichotomySpec(
        np.diag([1.0, 0.0]), _const(K), _exp_decay(lam),
        {"setting": "exponential", "K": K, "lam": lam, "u": math.sqrt(2.0) * kappa, "v": 0.0, "M": max(lam, 1.0 / lam)},
    )
    q_branch = kappa / (lam + eps0)
    oracle = "unstable branch: int_0^oo e^{-lam s} kappa e^{-eps0 s} ds = kappa/(lam+eps0)"
    expected = {
        "w_star(0)": Expected(np.array([0.0, q_branch]), "derived", oracle),
        "G(0,(1,1))": Expected(np.array([1.0, 1.0 + q_branch]), "derived", oracle),
        "H(0,(1,1))": Expected(np.array([1.0, 1.0 - q_branch]), "derived", oracle + "; f is y-independent so z = -w"),
        "c2_integral(0)": Expected(math.sqrt(2.0) * q_branch, "derived", "closed-form kernel integral at t = 0"),
        "q_hat": Expected(0.0, "trivial", "f does not depend on y"),
        "verdicts": Expected(
            {"c1": K >= 1.0, "c2": True, "c3": True, "c5": True},
            "derived",
            "diagonal flow: branch norms equal the exponential envelopes when K = 1",
        ),
    }
    return sys, nl, spec, expected


def _scalar_exp_sin(p: dict):
    nu, eps1, K = p["nu"], p["eps1"], p["K"]
    if nu < 0 or eps1 < 0 or K <= 0:
        raise ConfigurationError("scalar-exp-sin needs nu >= 0, eps1 >= 0, K > 0")
    sys = LinearSystemSpec(1, lambda t: np.array([[-1.0]]), 1.0)
    env = _exp_env(nu, eps1)
    nl = _sin_nonlinearity(nu, eps1, env, env, env)
    spec = DichotomySpec(
        np.eye(1), _const(K), _exp_decay(1.0),
        {
            "setting": "exponential", "K": K, "lam": 1.0, "u": nu, "v": nu, "M": 1.0,
            "nu": nu, "eps1": eps1, "zeta": nu, "eps2": eps1,
        },
    )
    q_bound = nu * _ramp_max(1.0, eps1)
    # with P = I the kernel vanishes at t = 0 beyond s = 0, so w(0; .) == 0
    expected = {
        "q_hat": Expected(q_bound, "derived", "closed-form maximum of int_0^t e^{-(t-s)} nu e^{-eps1 s} ds"),
        "p_hat": Expected(q_bound, "derived", "same integral, size and Lipschitz envelopes coincide"),
        "H(t,0)": Expected(0.0, "trivial", "f(t, 0) = 0 so zero is the fixed point"),
        "w_star(0)": Expected(0.0, "trivial", "stable projector is the identity"),
        "verdicts": Expected(
            {"c1": K >= 1.0, "c2": True, "c3": q_bound < 1, "c5": True, "second_order": False},
            "derived",
            "the second-order integrand K h {pi v + V Psi^2} tends to a positive constant",
        ),
    }
    return sys, nl, spec, expected


def _nonuniform_exp(p: dict):
    C, lam, eps1, M, nu = p["C"], p["lam"], p["eps1"], p["M"], p["nu"]
    eps0 = p["eps0"] if p["eps0"] is not None else eps1
    eps2 = p["eps2"] if p["eps2"] is not None else eps1
    kappa = p["kappa"] if p["kappa"] is not None else nu
    zeta = p["zeta"] if p["zeta"] is not None else nu
    for name, val in (("C", C), ("lam", lam), ("M", M)):
        if not val > 0:
            raise ConfigurationError(f"nonuniform-exp needs {name} > 0")
    if eps1 < 0 or eps0 < 0 or eps2 < 0:
        raise ConfigurationError("nonuniform-exp needs nonnegative eps0, eps1, eps2")
    if not M < lam:
        raise ConfigurationError("nonuniform-exp violates M < lam")
    if not 0 < nu < lam - M:
        raise ConfigurationError("nonuniform-exp violates 0 < nu < lam - M")
    if not eps0 > eps1 - lam:
        raise ConfigurationError("nonuniform-exp violates eps0 > eps1 - lam")
    if not (kappa >= nu and eps0 <= eps1):
        raise ConfigurationError("nonuniform-exp needs kappa >= nu and eps0 <= eps1 so that |f| <= kappa e^{-eps0 s}")
    if not (zeta >= nu and eps2 <= eps1):
        raise ConfigurationError("nonuniform-exp needs zeta >= nu and eps2 <= eps1 so that |d2f| <= zeta e^{-eps2 s}")
    sys = LinearSystemSpec(1, lambda t: np.array([[-M]]), M)
    nl = _sin_nonlinearity(nu, eps1, _exp_env(kappa, eps0), _exp_env(nu, eps1), _exp_env(zeta, eps2))
    spec = DichotomySpec(
        np.eye(1),
        lambda s: C * np.exp(eps1 * np.asarray(s, dtype=float)),
        _exp_decay(lam),
        {
            "setting": "nonuniform", "C": C, "lam": lam, "M": M, "nu": nu, "kappa": kappa,
            "zeta": zeta, "eps0": eps0, "eps1": eps1, "eps2": eps2,
        },
    )
    second_order = (3 * (M + nu) < lam + eps2) and (2 * (M + nu) < lam + eps2 - eps1)
    expected = {
        "sufficient_C1": Expected(True, "reference", "M < lam, 0 < nu < lam - M, eps0 > eps1 - lam"),
        "second_order_rate": Expected(
            -lam - eps2 + eps1 + 2 * (M + nu), "reference", "exponent of the second-order integrand's slower term"
        ),
        "verdicts": Expected(
            {"c1": False, "c2": True, "c3": True, "c5": True, "second_order": second_order},
            "derived",
            "c1 fails: |X(t,s)| = e^{-M(t-s)} exceeds C e^{eps1 s} e^{-lam(t-s)} once (lam - M)(t-s) > eps1 s + ln C",
        ),
    }
    return sys, nl, spec, expected


_BUILDERS: dict[str, tuple[Callable, dict]] = {
    "scalar-exp-forced": (_scalar_exp_forced, {"kappa": 0.1, "eps0": 1.0, "K": 1.0}),
    "saddle-2d-forced": (_saddle_2d_forced, {"lam": 2.0, "kappa": 0.05, "eps0": 1.0, "K": 1.0}),
    "scalar-exp-sin": (_scalar_exp_sin, {"nu": 0.1, "eps1": 1.0, "K": 1.0}),
    "nonuniform-exp": (
        _nonuniform_exp,
        {"C": 1.0, "lam": 1.0, "eps1": 0.1, "M": 0.5, "nu": 0.2,
         "eps0": None, "eps2": None, "kappa": None, "zeta": None},
    ),
}


def list_entries() -> list[str]:
    return list(_BUILDERS)


def _scaled(env: Callable | None, factor: float) -> Callable | None:
    if env is None or factor == 1.0:
        return env
    return lambda s: factor * env(s)


def get_entry(id: str, params: Mapping[str, Any] | None = None, **kwargs) -> CatalogEntry:
    """Build a catalog entry; unknown ids or parameters raise ``ConfigurationError``."""
    key = ALIASES.get(id, id)
    if key not in _BUILDERS:
        raise ConfigurationError(f"unknown catalog id {id!r}; known: {sorted(_BUILDERS)} or {sorted(ALIASES)}")
    builder, defaults = _BUILDERS[key]
    given = {**(params or {}), **kwargs}
    unknown = set(given) - set(defaults) - set(_GENERIC)
    if unknown:
        raise ConfigurationError(f"unknown parameters for {key}: {sorted(unknown)}")
    p = {**defaults, **{k: v for k, v in given.items() if k in defaults}}
    for k, v in p.items():
        if v is not None:
            p[k] = float(v)
    generic = {**_GENERIC, **{k: v for k, v in given.items() if k in _GENERIC}}
    sys, nl, spec, expected = builder(p)
    expected = dict(expected)
    if generic["unperturbed"]:
        nl = NonlinearitySpec.zero(sys.dimension)
        expected = {
            "H(t,xi)": Expected("xi", "trivial", "f = 0"),
            "G(t,eta)": Expected("eta", "trivial", "f = 0"),
            "p_hat": Expected(0.0, "trivial", "f = 0"),
            "q_hat": Expected(0.0, "trivial", "f = 0"),
        }
    u_scale, v_scale = float(generic["u_scale"]), float(generic["v_scale"])
    if u_scale != 1.0 or v_scale != 1.0:
        if u_scale < 0 or v_scale < 0:
            raise ConfigurationError("envelope scales must be nonnegative")
        nl = NonlinearitySpec(
            f=nl.f, df=nl.df, d2f=nl.d2f, u_env=_scaled(nl.u_env, u_scale),
            v_env=_scaled(nl.v_env, v_scale), V_env=nl.V_env, is_zero=nl.is_zero,
        )
        expected = {k: v for k, v in expected.items() if k not in ("p_hat", "q_hat", "verdicts")}
    resolved = {**{k: v for k, v in p.items()}, **generic}
    return CatalogEntry(key, resolved, sys, nl, spec, expected)
