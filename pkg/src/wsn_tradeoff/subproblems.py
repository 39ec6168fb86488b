"""
Per-agent maximisations of the decomposed Lagrangian.

Each is a one-dimensional strictly concave problem on a box, solved by
bisection on the sign of the derivative. The vectorised solver treats every
array element as an independent problem; an element's result does not depend
on what else is in the batch, which keeps concurrent and batched execution
bitwise identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .objective import TradeoffParams, combined_objective_log

EPS_C = 1e-9  # floor on allocated capacity, bit/s
EPS_R = 1e-9  # floor on code rate
TOL = 1e-10


def bisect_concave(deriv: Callable[[np.ndarray], np.ndarray], lo, hi, tol=TOL, max_iter: int = 400) -> np.ndarray:
    """Elementwise argmax over ``[lo, hi]`` of concave functions given their derivatives.

    ``deriv`` must be nonincreasing in its argument. When the derivative is
    nonnegative at ``hi`` the upper bound is returned; when it is nonpositive
    at ``lo`` (and negative at ``hi``) the lower bound. Otherwise the bracket is
    halved until narrower than ``tol`` and its midpoint returned.
    """
    lo, hi, tol = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float), np.asarray(tol, float))
    if np.any(~(lo < hi)):
        raise ValueError("invalid interval: need lo < hi")
    at_hi = deriv(hi) >= 0
    at_lo = ~at_hi & (deriv(lo) <= 0)
    a, b = lo.copy(), hi.copy()
    active = ~(at_hi | at_lo) & (b - a > tol)
    for _ in range(max_iter):
        if not active.any():
            break
        mid = 0.5 * (a + b)
        up = deriv(mid) > 0
        a = np.where(active & up, mid, a)
        b = np.where(active & ~up, mid, b)
        active &= b - a > tol
    return np.where(at_hi, hi, np.where(at_lo, lo, 0.5 * (a + b)))


def maximize_concave_1d(deriv: Callable[[float], float], lo: float, hi: float, tol: float = TOL) -> float:
    """Scalar front end to :func:`bisect_concave`."""
    return float(bisect_concave(lambda t: np.vectorize(deriv, otypes=[float])(t), lo, hi, tol))


# ---------------------------------------------------------------------------
# compiled kernels for the three subproblem shapes

_RATE, _RELIABILITY, _POWER, _CODE_RATE = 0, 1, 2, 3


@njit(cache=True)
def _deriv(kind, t, p0, p1, p2, p3):
    if kind == _RATE:  # p0 * exp(p1 * t) - p2 - p3 * exp(t)
        return p0 * math.exp(p1 * t) - p2 - p3 * math.exp(t)
    if kind == _RELIABILITY:  # p0 * t**(-p1) - p2
        return p0 * t ** (-p1) - p2
    if kind == _POWER:  # p0 - p1 * t**p2
        return p0 - p1 * t**p2
    # code rate: p0 / t - p1 * 0.5 * p2 * exp(-p2 * (1 - t))
    return p0 / t - p1 * 0.5 * p2 * math.exp(-p2 * (1.0 - t))


@njit(cache=True)
def _bisect_kernel(kind, params, lo, hi, tol):
    n = lo.shape[0]
    out = np.empty(n)
    for i in range(n):
        p0, p1, p2, p3 = params[i, 0], params[i, 1], params[i, 2], params[i, 3]
        a, b = lo[i], hi[i]
        if _deriv(kind, b, p0, p1, p2, p3) >= 0.0:
            out[i] = b
            continue
        if _deriv(kind, a, p0, p1, p2, p3) <= 0.0:
            out[i] = a
            continue
        for _ in range(400):
            if b - a <= tol:
                break
            mid = 0.5 * (a + b)
            if _deriv(kind, mid, p0, p1, p2, p3) > 0.0:
                a = mid
            else:
                b = mid
        out[i] = 0.5 * (a + b)
    return out


def _run_kernel(kind, cols, lo, hi, tol):
    n = np.broadcast(*cols, lo, hi).shape
    params = np.zeros(n + (4,))
    for k, col in enumerate(cols):
        params[..., k] = col
    lo = np.broadcast_to(np.asarray(lo, float), n).ravel()
    hi = np.broadcast_to(np.asarray(hi, float), n).ravel()
    if np.any(~(lo < hi)):
        raise ValueError("invalid interval: need lo < hi")
    return _bisect_kernel(kind, params.reshape(-1, 4), np.ascontiguousarray(lo), np.ascontiguousarray(hi), float(tol)).reshape(n)


# ---------------------------------------------------------------------------
# node subproblem


@dataclass
class NodeSubproblemInput:
    """Prices seen by one sensor node.

    ``relay_price_sum`` is the energy price of pushing one of the node's own
    bits to the sink: the relays' prices weighted by their per-bit relay
    power, plus the node's own price times its transmit power.
    """

    lambda_e2e: float
    mu: float
    nu_self: float
    relay_price_sum: float
    e_s: float
    z_lo: float
    z_hi: float
    params: TradeoffParams  # scalar per-source fields


def solve_node_subproblems(lambda_e2e, mu, nu, K, e_s, z_lo, z_hi, params: TradeoffParams, tol=TOL):
    """Batched node subproblem: returns arrays ``(x_log, R, z)``.

    All arguments are arrays over sources (``params`` resolved). The objective
    separates into log-rate, reliability and normalised-power parts which are
    maximised independently:

    * log-rate: ``gamma*phi*U(exp(u)) - lambda_e2e*u - K*exp(u)``
    * reliability: ``gamma*(1-phi)*U_R(R) - mu*R``; with zero weight the
      part is flat at ``mu = 0`` and ``R_min`` is returned
    * power: ``nu*e_s*z - (1-gamma)*varpi/(beta-1)*z**(beta-1)``, bisected
      in ``z / z_hi`` so the tolerance is relative.
    """
    p = params
    e = 1.0 - p.alpha
    rate_scale = p.gamma * p.phi * e / (np.power(p.x_max, e) - np.power(p.x_min, e))
    x_log = _run_kernel(_RATE, (rate_scale, e, lambda_e2e, K), np.log(p.x_min), np.log(p.x_max), tol)
    rel_scale = p.gamma * (1.0 - p.phi) * e / (np.power(p.R_max, e) - np.power(p.R_min, e))
    R = _run_kernel(_RELIABILITY, (rel_scale, p.alpha, mu), p.R_min, p.R_max, tol)
    # without reliability utility any R up to the delivered reliability is
    # optimal; the lower bound keeps the coupling constraint slack
    R = np.where(rel_scale > 0, R, p.R_min)
    w = (1.0 - p.gamma) * p.varpi * np.power(z_hi, p.beta - 2.0)
    t = _run_kernel(_POWER, (nu * e_s, w, p.beta - 2.0), z_lo / z_hi, 1.0, tol)
    return x_log, R, t * z_hi


def solve_node_subproblem(inp: NodeSubproblemInput) -> tuple[float, float, float]:
    x_log, R, z = solve_node_subproblems(
        np.array([inp.lambda_e2e]), np.array([inp.mu]), np.array([inp.nu_self]),
        np.array([inp.relay_price_sum]), np.array([inp.e_s]),
        np.array([inp.z_lo]), np.array([inp.z_hi]), inp.params,
    )
    return float(x_log[0]), float(R[0]), float(z[0])


def node_lagrangian(x_log, R, z, lambda_e2e, mu, nu, K, e_s, params: TradeoffParams):
    """Value of a node's share of the Lagrangian at the given point."""
    return combined_objective_log(x_log, R, z, params) - lambda_e2e * x_log - mu * R + nu * e_s * z - K * np.exp(x_log)


# ---------------------------------------------------------------------------
# link subproblems


def solve_link_allocation(prices, capacity: float, eps: float = EPS_C) -> np.ndarray:
    """Split a link's capacity to maximise ``sum(price * log c)``.

    Proportional to price when some price is positive; zero-price sources get
    the floor ``eps`` and the rest of the budget is shared proportionally. If
    every price is zero the objective is flat and the capacity is split evenly.
    """
    lam = np.asarray(prices, dtype=float)
    if np.any(lam < 0):
        raise ValueError("prices must be nonnegative")
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    return _allocate(lam, capacity, eps)


def _allocate(lam, capacity, eps):
    n = lam.size
    total = 0.0
    for v in lam:
        total += v
    if total <= 0:
        return np.full(n, capacity / n)
    zero = lam <= 0
    budget = capacity - eps * np.count_nonzero(zero)
    return np.where(zero, eps, lam / total * budget)


def solve_code_rates(lam, mu, kappa: float, eps: float = EPS_R, tol=TOL) -> np.ndarray:
    """Code rates maximising ``lam * log r - mu * E(r)`` on ``[eps, 1]``, elementwise."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(lam < 0) or np.any(mu < 0):
        raise ValueError("prices must be nonnegative")
    return _run_kernel(_CODE_RATE, (lam, mu, kappa), eps, 1.0, tol)


def solve_code_rate(lambda_ls: float, mu_s: float, kappa: float) -> float:
    return float(solve_code_rates(np.array([lambda_ls]), np.array([mu_s]), kappa)[0])
