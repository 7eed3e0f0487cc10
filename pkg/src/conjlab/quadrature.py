"""Adaptive Gauss-Kronrod quadrature on truncated half lines."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "TruncationError",
    "TailEnvelope",
    "HalfLineIntegral",
    "DecayIntegral",
    "gk15_rule",
    "gk15_panels",
    "adaptive_integral",
    "choose_horizon",
    "integrate_half_line",
    "integrate_decaying",
]

# 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1]
# (abscissae and weights as tabulated in QUADPACK's qk15).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_gauss = np.zeros(8)
_gauss[1:7:2] = _WG[:3]
_gauss[7] = _WG[3]
_GWEIGHTS = np.concatenate([_gauss[:-1], _gauss[::-1]])


def gk15_rule():
    """Nodes, Kronrod weights and embedded Gauss weights on [-1, 1]."""
    return _NODES.copy(), _KWEIGHTS.copy(), _GWEIGHTS.copy()


class TruncationError(RuntimeError):
    """The tail bound stayed above tolerance at the largest allowed horizon."""

    def __init__(self, achieved: float, horizon: float, tol: float):
        super().__init__(
            f"tail bound {achieved:.3e} still above tolerance {tol:.3e} at horizon {horizon:g}"
        )
        self.achieved = achieved
        self.horizon = horizon
        self.tol = tol


@dataclass(frozen=True)
class TailEnvelope:
    """A majorant of |g(s)| valid for s >= ``start``.

    ``tail(T)`` may supply the closed-form integral over [T, oo); without it
    the tail is integrated numerically with exponential extrapolation.
    """

    bound: Callable[[np.ndarray], np.ndarray]
    start: float = 0.0
    tail: Callable[[float], float] | None = None

    def tail_integral(self, T: float) -> float:
        if T < self.start:
            raise ValueError(f"envelope only valid beyond s={self.start}")
        if self.tail is not None:
            return float(self.tail(T))
        res = integrate_decaying(self.bound, T, tol=0.0, rel_tol=1e-6, span=200.0)
        if not res.finite:
            return float("inf")
        return res.value + res.tail_estimate


class HalfLineIntegral(NamedTuple):
    value: np.ndarray
    tail_bound: float
    error: float
    horizon: float


class DecayIntegral(NamedTuple):
    value: float
    tail_estimate: float
    rate: float
    horizon: float
    finite: bool


def gk15_panels(g: Callable, a: np.ndarray, b: np.ndarray):
    """Kronrod sums and |Kronrod - Gauss| error on each panel [a_i, b_i]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    s = mid[:, None] + half[:, None] * _NODES[None, :]
    vals = np.asarray(g(s.ravel()), dtype=float)
    trailing = vals.shape[1:]
    vals = vals.reshape((len(a), 15) + trailing)
    scale = half.reshape((-1,) + (1,) * len(trailing))
    wk = _KWEIGHTS.reshape((1, 15) + (1,) * len(trailing))
    wg = _GWEIGHTS.reshape((1, 15) + (1,) * len(trailing))
    kron = scale * np.sum(wk * vals, axis=1)
    gauss = scale * np.sum(wg * vals, axis=1)
    diff = np.abs(kron - gauss).reshape(len(a), -1)
    err = diff.max(axis=1) if diff.shape[1] else np.zeros(len(a))
    mag = np.abs(kron).reshape(len(a), -1)
    mag = mag.max(axis=1) if mag.shape[1] else np.zeros(len(a))
    # roundoff floor: differences this small are noise, not truncation error
    err = np.where(err <= 50 * np.finfo(float).eps * mag, 0.0, err)
    return kron, err


def adaptive_integral(g: Callable, edges, tol: float, limit: int = 20000, refine: bool = True):
    """Integrate over the union of panels given by sorted ``edges``.

    Panels whose error exceeds their length-proportional share of ``tol`` are
    bisected until the summed error estimate is below ``tol`` or the panel
    limit is hit.  Returns ``(value, error, n_panels)``.
    """
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    if len(a) == 0:
        probe = np.asarray(g(np.array([edges[0]])), dtype=float)
        return np.zeros(probe.shape[1:]), 0.0, 0
    length = b[-1] - a[0] if len(a) else 0.0
    val, err = gk15_panels(g, a, b)
    while refine:
        total = err.sum()
        if total <= tol:
            break
        bad = err > tol * (b - a) / length
        if not bad.any():
            bad = err == err.max()
        if len(a) + int(bad.sum()) > limit:
            break
        mid = 0.5 * (a[bad] + b[bad])
        na = np.concatenate([a[bad], mid])
        nb = np.concatenate([mid, b[bad]])
        nval, nerr = gk15_panels(g, na, nb)
        a = np.concatenate([a[~bad], na])
        b = np.concatenate([b[~bad], nb])
        val = np.concatenate([val[~bad], nval])
        err = np.concatenate([err[~bad], nerr])
    return val.sum(axis=0), float(err.sum()), len(a)


def choose_horizon(env: TailEnvelope, tol: float, t0: float, cap: float) -> tuple[float, float]:
    """Double T from ``t0`` until the envelope tail is within ``tol``."""
    T = min(max(t0, env.start), cap) if t0 < cap else cap
    while True:
        tail = env.tail_integral(T)
        if tail <= tol:
            return T, tail
        if T >= cap:
            raise TruncationError(tail, T, tol)
        T = min(2.0 * T, cap)


def integrate_half_line(
    g: Callable,
    split: float,
    env: TailEnvelope | None,
    tol: float,
    *,
    start: float = 0.0,
    horizon: float | None = None,
    min_horizon: float = 10.0,
    cap: float = 200.0,
    adaptive: bool = True,
    honor_split: bool = True,
    n_initial: int = 8,
) -> HalfLineIntegral:
    """Integrate ``g`` over [start, oo) with a certified truncation.

    The horizon T doubles from ``max(split, min_horizon)`` until the
    envelope's tail integral is at most ``tol``.  With ``env=None`` the
    integrand is taken to vanish beyond ``split`` and the integral stops
    there exactly.  ``split`` is always a panel edge when ``honor_split``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if env is None:
        T, tail = max(float(split), start), 0.0
    elif horizon is not None:
        T = float(horizon)
        tail = env.tail_integral(T)
        if tail > tol:
            raise TruncationError(tail, T, tol)
    else:
        T, tail = choose_horizon(env, tol, max(float(split), min_horizon, start), cap)
    edges = np.linspace(start, T, n_initial + 1) if T > start else np.array([start, start])
    if honor_split and start < split < T:
        edges = np.union1d(edges, [split])
    value, err, _ = adaptive_integral(g, edges, tol, refine=adaptive)
    return HalfLineIntegral(value, float(tail), err, T)


def integrate_decaying(
    g: Callable,
    start: float,
    tol: float,
    *,
    rel_tol: float = 1e-8,
    span: float = 200.0,
    window: float = 5.0,
    min_rate: float = 1e-3,
) -> DecayIntegral:
    """Integrate a nonnegative scalar integrand whose decay is not known a priori.

    The horizon doubles (from ``start + 10``) until the integrand's log-slope
    over the last ``window`` is below ``-min_rate`` and the extrapolated tail
    ``g(T)/|rate|`` is small, or ``start + span`` is reached.  If the
    integrand is not decaying at the final horizon the result is flagged as
    not finite and ``rate`` carries the measured growth rate.
    """
    T = start + min(10.0, span)
    stop = start + span
    while True:
        gt = float(g(np.array([T]))[0])
        gw = float(g(np.array([T - window]))[0])
        rate = _log_slope(gw, gt, window)
        decaying = rate < -min_rate
        tail_est = gt / -rate if decaying else float("inf")
        if gt == 0.0:
            tail_est, decaying = 0.0, True
        if decaying:
            value = _relative_integral(g, start, T, tol, rel_tol)
            if tail_est <= max(tol, rel_tol * abs(value)) or T >= stop:
                return DecayIntegral(value, tail_est, rate, T, True)
        elif T >= stop:
            value = _relative_integral(g, start, T, tol, rel_tol)
            return DecayIntegral(value, float("inf"), rate, T, False)
        T = min(start + 2 * (T - start), stop)


def _relative_integral(g, a: float, b: float, tol: float, rel_tol: float) -> float:
    edges = np.linspace(a, b, 17)
    rough, _, _ = adaptive_integral(g, edges, 0.0, refine=False)
    target = max(tol, rel_tol * abs(float(rough)), 1e-300)
    value, _, _ = adaptive_integral(g, edges, target, limit=4000)
    return float(value)


def _log_slope(g0: float, g1: float, h: float) -> float:
    if g1 <= 0.0 and g0 <= 0.0:
        return -np.inf
    if g1 <= 0.0:
        return -np.inf
    if g0 <= 0.0:
        return np.inf
    return (np.log(g1) - np.log(g0)) / h
