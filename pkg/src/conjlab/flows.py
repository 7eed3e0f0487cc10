"""Linear and nonlinear flows, evaluated by adaptive Runge-Kutta integration.

Callables follow one broadcasting convention throughout the package:

* ``coefficient(t)`` takes a scalar time and returns a ``(d, d)`` array.
* ``f(t, u)`` accepts ``t`` of shape ``(...)`` and ``u`` of shape ``(..., d)``
  and returns ``(..., d)``; ``df`` returns ``(..., d, d)`` and ``d2f`` returns
  ``(..., d, d, d)`` with ``d2f[..., i, j, k] = d^2 f_i / du_j du_k``.
* envelopes map an array of times to an array of nonnegative reals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import DOP853, RK45
from scipy.interpolate import CubicHermiteSpline

from .settings import DEFAULT, Settings

__all__ = [
    "IntegrationError",
    "CapabilityError",
    "DomainError",
    "LinearSystemSpec",
    "NonlinearitySpec",
    "Trajectory",
    "LinearFlow",
    "transition_matrix",
    "solve_nonlinear",
    "first_variation",
    "second_variation",
    "variational_flow",
    "opnorm",
    "tensor_norm",
]

_SOLVERS = {"RK45": RK45, "DOP853": DOP853}


class IntegrationError(RuntimeError):
    """The step-size controller gave up; ``interval`` is the span being integrated."""

    def __init__(self, message: str, interval: tuple[float, float]):
        super().__init__(f"{message} on interval [{interval[0]:.6g}, {interval[1]:.6g}]")
        self.interval = interval


class CapabilityError(ValueError):
    """A derivative of the nonlinearity was required but not supplied."""


class DomainError(ValueError):
    """A time argument fell outside the half line."""


def opnorm(a: np.ndarray) -> np.ndarray:
    """Operator 2-norm over the last two axes."""
    a = np.asarray(a, dtype=float)
    if a.shape[-2:] == (1, 1):
        return np.abs(a[..., 0, 0])
    return np.linalg.norm(a, ord=2, axis=(-2, -1))


def tensor_norm(w: np.ndarray) -> np.ndarray:
    """Norm of a bilinear map stored as ``(..., d, d, d)``.

    Uses the spectral norm of the ``d x d^2`` unfolding, which dominates
    ``sup |w(a, b)|`` over unit vectors and equals it when ``d = 1``.
    """
    w = np.asarray(w, dtype=float)
    d = w.shape[-1]
    return opnorm(w.reshape(w.shape[:-3] + (d, d * d)))


@dataclass(frozen=True)
class LinearSystemSpec:
    dimension: int
    coefficient: Callable[[float], np.ndarray]
    uniform_bound: float

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if not self.uniform_bound > 0:
            raise ValueError("uniform_bound must be positive")

    def A(self, t: float) -> np.ndarray:
        return np.asarray(self.coefficient(float(t)), dtype=float).reshape(self.dimension, self.dimension)

    def A_many(self, ts: Iterable[float]) -> np.ndarray:
        return np.stack([self.A(t) for t in np.atleast_1d(ts)])

    def check_bounds(self, times: Sequence[float]) -> dict:
        """Sample ``|A(t)|`` and ``|A(t)^-1|`` against the uniform bound."""
        mats = self.A_many(times)
        norms = opnorm(mats)
        sv = np.linalg.svd(mats, compute_uv=False)
        smin = sv[..., -1]
        inv_norms = np.where(smin > 0, 1.0 / np.where(smin > 0, smin, 1.0), np.inf)
        invertible = bool(np.all(smin > np.finfo(float).eps * np.maximum(sv[..., 0], 1.0)))
        return {
            "max_norm": float(norms.max()),
            "max_inverse_norm": float(inv_norms.max()),
            "invertible": invertible,
            "norm_ok": bool(norms.max() <= self.uniform_bound * (1 + 1e-12)),
            "inverse_ok": bool(invertible and inv_norms.max() <= self.uniform_bound * (1 + 1e-12)),
        }


def _zero_env(s):
    return np.zeros_like(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class NonlinearitySpec:
    f: Callable
    u_env: Callable
    v_env: Callable
    df: Callable | None = None
    d2f: Callable | None = None
    V_env: Callable | None = None
    is_zero: bool = False  # f vanishes identically; lets callers skip exact-zero integrals

    @classmethod
    def zero(cls, dimension: int) -> "NonlinearitySpec":
        d = dimension

        def f(t, u):
            return np.zeros_like(np.asarray(u, dtype=float))

        def df(t, u):
            u = np.asarray(u, dtype=float)
            return np.zeros(u.shape + (d,))

        def d2f(t, u):
            u = np.asarray(u, dtype=float)
            return np.zeros(u.shape + (d, d))

        return cls(f=f, u_env=_zero_env, v_env=_zero_env, df=df, d2f=d2f, V_env=_zero_env, is_zero=True)

    def require_df(self) -> Callable:
        if self.df is None:
            raise CapabilityError("the nonlinearity has no first derivative (df)")
        return self.df

    def require_d2f(self) -> Callable:
        if self.d2f is None:
            raise CapabilityError("the nonlinearity has no second derivative (d2f)")
        return self.d2f

    def check_envelopes(self, dimension: int, s_range=(0.0, 10.0), box=(-2.0, 2.0), n: int = 41, seed: int = 0) -> dict:
        """Sample the envelope inequalities on an ``n x n`` grid of (s, u).

        For ``d > 1`` the u-axis is replaced by ``n`` seeded points in the box.
        Returns the worst ratio of each quantity to its envelope (<= 1 means ok).
        """
        s = np.linspace(*s_range, n)
        if dimension == 1:
            u = np.linspace(*box, n)[:, None]
        else:
            u = np.random.default_rng(seed).uniform(box[0], box[1], size=(n, dimension))
        S = np.repeat(s, len(u))
        U = np.tile(u, (n, 1))
        out: dict = {}
        out["u"] = _worst_ratio(np.linalg.norm(self.f(S, U), axis=-1), self.u_env(S))
        if self.df is not None:
            out["v"] = _worst_ratio(opnorm(self.df(S, U)), self.v_env(S))
        if self.d2f is not None and self.V_env is not None:
            out["V"] = _worst_ratio(tensor_norm(self.d2f(S, U)), self.V_env(S))
        out["passed"] = all(r <= 1 + 1e-9 for r in out.values())
        return out


def _worst_ratio(num, den) -> float:
    num = np.asarray(num, float)
    den = np.asarray(den, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(num <= 1e-300, 0.0, num / den)
    return float(np.max(r))


class Trajectory:
    """Samples of a solution with a cubic Hermite interpolant between them.

    Values may be vectors, matrices or order-3 arrays; the trailing shape is
    kept in ``shape``.  Evaluating at a stored sample time returns the stored
    sample itself.
    """

    def __init__(self, origin: tuple[float, np.ndarray], times, values, derivs, shape=None):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        derivs = np.asarray(derivs, dtype=float)
        if times.ndim != 1 or np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        self.origin = (float(origin[0]), np.array(origin[1], dtype=float))
        self.shape = tuple(shape) if shape is not None else values.shape[1:]
        n = len(times)
        self._t = times
        self._v = values.reshape(n, -1)
        self._dv = derivs.reshape(n, -1)
        for arr in (self._t, self._v, self._dv):
            arr.setflags(write=False)
        self._spline = CubicHermiteSpline(times, self._v, self._dv, axis=0) if n > 1 else None

    @property
    def times(self) -> np.ndarray:
        return self._t

    @property
    def values(self) -> np.ndarray:
        return self._v.reshape((len(self._t),) + self.shape)

    @property
    def derivatives(self) -> np.ndarray:
        return self._dv.reshape((len(self._t),) + self.shape)

    @property
    def span(self) -> tuple[float, float]:
        return float(self._t[0]), float(self._t[-1])

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr).ravel()
        lo, hi = self.span
        if np.any(flat < lo - _gap(lo)) or np.any(flat > hi + _gap(hi)):
            raise DomainError(f"time outside the integrated span [{lo}, {hi}]")
        flat = np.clip(flat, lo, hi)
        if self._spline is None:
            out = np.repeat(self._v, len(flat), axis=0)
        else:
            out = self._spline(flat)
            idx = np.searchsorted(self._t, flat)
            idx = np.clip(idx, 0, len(self._t) - 1)
            hit = self._t[idx] == flat
            out[hit] = self._v[idx[hit]]
        return out.reshape(t_arr.shape + self.shape)

    def component(self, start: int, stop: int, shape) -> "Trajectory":
        """Slice of the flattened state, reshaped to ``shape``."""
        return Trajectory(
            self.origin, self._t, self._v[:, start:stop], self._dv[:, start:stop], shape=shape
        )


def _check_times(*times) -> None:
    for t in times:
        arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(arr < 0):
            raise DomainError("times must be nonnegative")
        if not np.all(np.isfinite(arr)):
            raise DomainError("times must be finite")


def _march(rhs, t0: float, y0: np.ndarray, t_end: float, settings: Settings, atol: float):
    """Integrate from ``t0`` to ``t_end`` recording every accepted step."""
    ts, ys, fs = [t0], [y0.copy()], []
    if t_end == t0:
        fs.append(rhs(t0, y0))
        return ts, ys, fs
    solver = _SOLVERS[settings.method](
        rhs, t0, y0, t_end, rtol=settings.rtol, atol=atol, max_step=settings.max_step
    )
    fs.append(np.array(solver.f, copy=True))
    while solver.status == "running":
        t_prev = solver.t
        message = solver.step()
        if solver.status == "failed":
            raise IntegrationError(message or "step failure", (min(t_prev, t_end), max(t_prev, t_end)))
        ts.append(solver.t)
        ys.append(solver.y.copy())
        fs.append(np.array(solver.f, copy=True))
    return ts, ys, fs


def _integrate(rhs, t0: float, y0, stops, settings: Settings, atol: float):
    """Integrate both ways from ``t0``, restarting at every stop so each is a sample."""
    y0 = np.asarray(y0, dtype=float).ravel()
    stops = _collapse(np.asarray(list(stops), dtype=float), t0)
    times, states, derivs = [t0], [y0], [rhs(t0, y0)]
    for direction_stops in (stops[stops > t0], stops[stops < t0][::-1]):
        t, y = t0, y0
        seg_t, seg_y, seg_f = [], [], []
        for stop in direction_stops:
            ts, ys, fs = _march(rhs, t, y, float(stop), settings, atol)
            seg_t += ts[1:]
            seg_y += ys[1:]
            seg_f += fs[1:]
            # land exactly on the stop so the sample time is reproducible
            seg_t[-1] = float(stop)
            t, y = float(stop), ys[-1]
        times += seg_t
        states += seg_y
        derivs += seg_f
    order = np.argsort(times, kind="stable")
    times = np.asarray(times)[order]
    states = np.asarray(states)[order]
    derivs = np.asarray(derivs)[order]
    keep = np.concatenate([[True], np.diff(times) > _gap(times[1:])])
    return times[keep], states[keep], derivs[keep]


def _gap(t):
    # samples closer than this would make the Hermite interpolant overflow
    return 1e-12 * np.maximum(1.0, np.abs(t))


def _collapse(stops: np.ndarray, t0: float) -> np.ndarray:
    """Sorted unique stops including ``t0``, dropping those within round-off of a kept one."""
    stops = np.unique(np.append(stops, t0))
    kept = [t0]
    for t in stops[stops > t0]:
        if t - kept[-1] > _gap(t):
            kept.append(float(t))
    below = [t0]
    for t in stops[stops < t0][::-1]:
        if below[-1] - t > _gap(t):
            below.append(float(t))
    return np.asarray(sorted(below[1:] + kept))


def transition_matrix(sys: LinearSystemSpec, t: float, s: float, settings: Settings = DEFAULT) -> np.ndarray:
    """X(t, s): the solution matrix of x' = A(t) x with X(s, s) = I."""
    _check_times(t, s)
    t, s = float(t), float(s)
    d = sys.dimension
    if t == s:
        return np.eye(d)

    def rhs(r, y):
        return (sys.A(r) @ y.reshape(d, d)).ravel()

    _, ys, _ = _march(rhs, s, np.eye(d).ravel(), t, settings, settings.linear_atol)
    return ys[-1].reshape(d, d)


class LinearFlow:
    """Cached fundamental matrices Phi(t) = X(t, 0) and Phi^-1(t) = X(0, t).

    Both are integrated forward from 0 (the inverse through the adjoint
    equation Y' = -Y A) and stored as Hermite interpolants, so
    X(t, s) = Phi(t) Phi^-1(s) is cheap to evaluate on large batches.  The
    horizon grows by doubling whenever a later time is requested.
    """

    def __init__(self, sys: LinearSystemSpec, settings: Settings = DEFAULT, horizon: float = 10.0):
        self.sys = sys
        self.settings = settings
        self._horizon = 0.0
        self._fwd: Trajectory | None = None
        self._bwd: Trajectory | None = None
        self.ensure(horizon)

    @property
    def horizon(self) -> float:
        return self._horizon

    def ensure(self, horizon: float) -> None:
        horizon = float(horizon)
        if horizon <= self._horizon:
            return
        target = max(horizon, 2 * self._horizon, 1.0)
        d = self.sys.dimension
        A = self.sys.A

        def fwd(r, y):
            return (A(r) @ y.reshape(d, d)).ravel()

        def bwd(r, y):
            return -(y.reshape(d, d) @ A(r)).ravel()

        eye = np.eye(d)
        st = self.settings
        t1, y1, f1 = _integrate(fwd, 0.0, eye, [target], st, st.linear_atol)
        t2, y2, f2 = _integrate(bwd, 0.0, eye, [target], st, st.linear_atol)
        self._fwd = Trajectory((0.0, eye), t1, y1, f1, shape=(d, d))
        self._bwd = Trajectory((0.0, eye), t2, y2, f2, shape=(d, d))
        self._horizon = target

    def _prepare(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        _check_times(t)
        if t.size:
            self.ensure(float(np.max(t)))
        return t

    def forward(self, t) -> np.ndarray:
        """Phi(t) = X(t, 0)."""
        t = self._prepare(t)
        return self._fwd(t)

    def backward(self, s) -> np.ndarray:
        """Phi(s)^-1 = X(0, s)."""
        s = self._prepare(s)
        return self._bwd(s)

    def X(self, t, s) -> np.ndarray:
        return self.forward(t) @ self.backward(s)


def _targets(tau: float, t_targets) -> list[float]:
    targets = [float(x) for x in np.atleast_1d(np.asarray(t_targets, dtype=float))]
    _check_times(tau, targets)
    return targets


def solve_nonlinear(
    sys: LinearSystemSpec,
    nl: NonlinearitySpec,
    tau: float,
    eta,
    t_targets,
    settings: Settings = DEFAULT,
) -> Trajectory:
    """y(., tau, eta) for y' = A(t) y + f(t, y), sampled at least at the targets."""
    targets = _targets(tau, t_targets)
    d = sys.dimension
    eta = np.asarray(eta, dtype=float).reshape(d)

    def rhs(r, y):
        return sys.A(r) @ y + nl.f(np.array([r]), y[None, :])[0]

    times, states, derivs = _integrate(rhs, float(tau), eta, targets, settings, settings.atol)
    return Trajectory((tau, eta), times, states, derivs, shape=(d,))


@dataclass(frozen=True)
class VariationalFlow:
    """Base solution and its derivatives with respect to the initial value."""

    y: Trajectory
    z: Trajectory
    w: Trajectory | None = None


def variational_flow(
    sys: LinearSystemSpec,
    nl: NonlinearitySpec,
    tau: float,
    eta,
    t_targets,
    order: int = 1,
    settings: Settings = DEFAULT,
) -> VariationalFlow:
    """Integrate y together with dy/deta (and d^2y/deta^2 when ``order == 2``)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    df = nl.require_df()
    d2f = nl.require_d2f() if order == 2 else None
    targets = _targets(tau, t_targets)
    d = sys.dimension
    eta = np.asarray(eta, dtype=float).reshape(d)
    nz = d * d

    def rhs(r, state):
        y = state[:d]
        z = state[d : d + nz].reshape(d, d)
        rr = np.array([r])
        A = sys.A(r)
        J = A + df(rr, y[None, :])[0]
        dy = A @ y + nl.f(rr, y[None, :])[0]
        dz = J @ z
        if order == 1:
            return np.concatenate([dy, dz.ravel()])
        w = state[d + nz :].reshape(d, d, d)
        Hf = d2f(rr, y[None, :])[0]
        dw = np.einsum("ij,jab->iab", J, w) + np.einsum("ijk,ja,kb->iab", Hf, z, z)
        return np.concatenate([dy, dz.ravel(), dw.ravel()])

    init = [eta, np.eye(d).ravel()]
    if order == 2:
        init.append(np.zeros(d * nz))
    times, states, derivs = _integrate(rhs, float(tau), np.concatenate(init), targets, settings, settings.atol)
    full = Trajectory((tau, eta), times, states, derivs)
    y = full.component(0, d, (d,))
    z = full.component(d, d + nz, (d, d))
    w = full.component(d + nz, d + nz + d * nz, (d, d, d)) if order == 2 else None
    return VariationalFlow(y=y, z=z, w=w)


def first_variation(sys, nl, tau, eta, t_targets, settings: Settings = DEFAULT) -> Trajectory:
    """dy/deta(t, tau, eta) as a matrix-valued trajectory."""
    return variational_flow(sys, nl, tau, eta, t_targets, order=1, settings=settings).z


def second_variation(sys, nl, tau, eta, t_targets, settings: Settings = DEFAULT) -> Trajectory:
    """d^2y/deta^2(t, tau, eta) as an order-3-array trajectory."""
    return variational_flow(sys, nl, tau, eta, t_targets, order=2, settings=settings).w
