"""
Centralised reference solver for the convex tradeoff problem.

The oracle shares nothing with the price iteration beyond the problem data.
It eliminates the variables that bind at any optimum (normalised power
``z = p(x)/e`` and capacity shares ``c`` along the tight capacity frontier)
and solves the remaining smooth program in log-rate, reliability and log code
rate::

    maximise   sum_s W_s(x_s, R_s, p_s(x)/e_s)
    subject to sum_{s on l} x_s / r_{l,s} <= C_l          for every link l
               R_s + sum_{l in route(s)} E(r_{l,s}) <= 1   for every source s
               box bounds on x, R and r

by sequential quadratic programming. Multipliers are recovered from the KKT
conditions and the dual function evaluated there gives a certified upper
bound on the optimum (weak duality).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, nnls

from .model import NetworkInstance, derive_sets, node_power
from .objective import PrimalState, TradeoffParams, error_prob
from .sdd import DualState, Problem, constraint_residuals, objective_value
from .subproblems import EPS_C, EPS_R, node_lagrangian, solve_code_rates, solve_link_allocation, solve_node_subproblems


class InfeasibleInstance(ValueError):
    """No point with minimum rates meets the reliability floors."""


class InfeasiblePrimal(ValueError):
    def __init__(self, residuals: dict[str, float], tol: float):
        worst = ", ".join(f"{k}={v:.3g}" for k, v in residuals.items())
        super().__init__(f"primal point violates constraints beyond {tol:g}: {worst}")
        self.residuals = residuals


@dataclass
class OracleSolution:
    """Reference optimum with its weak-duality certificate.

    ``value`` is the objective at the returned (feasible) point and
    ``upper_bound`` the dual function at the recovered multipliers, so the
    true optimum lies in ``[value, upper_bound]``.
    """

    primal: PrimalState
    value: float
    upper_bound: float
    multipliers: DualState
    status: str
    iterations: int
    stationarity: float
    max_violation: float
    message: str = ""

    @property
    def gap(self) -> float:
        return self.upper_bound - self.value


def _power_matrix(instance: NetworkInstance) -> np.ndarray:
    """``M[i, j]``: power drawn at node ``i`` per bit/s of source ``j``."""
    sets = derive_sets(instance)
    src = instance.sensor_nodes
    M = np.empty((len(src), len(src)))
    for j, s in enumerate(src):
        unit = {q: float(q == s) for q in src}
        M[:, j] = [node_power(instance, sets, unit, q) for q in src]
    return M


class _Reduced:
    """The eliminated program and its derivatives, variables ``v = [x', R, u]``."""

    def __init__(self, problem: Problem):
        self.problem = problem
        p, sets = problem.params, problem.sets
        self.S, self.P = problem.n_sources, problem.n_pairs
        self.M = _power_matrix(problem.instance)
        self.links = [np.flatnonzero(sets.pair_link == i) for i in range(len(problem.capacity))]
        self.links = [ks for ks in self.links if ks.size]
        self.link_of = [int(sets.pair_link[ks[0]]) for ks in self.links]
        self.src = sets.pair_source
        self.routes = [np.asarray(rp) for rp in sets.route_pairs]
        e = 1.0 - p.alpha
        self.e = e
        self.Dx = np.power(p.x_max, e) - np.power(p.x_min, e)
        self.DR = np.power(p.R_max, e) - np.power(p.R_min, e)
        self.bounds = (
            list(zip(np.log(p.x_min), np.log(p.x_max)))
            + list(zip(p.R_min, p.R_max))
            + [(np.log(EPS_R), 0.0)] * self.P
        )

    def split(self, v):
        S = self.S
        return v[:S], v[S : 2 * S], v[2 * S :]

    def z(self, xl):
        return self.M @ np.exp(xl) / self.problem.energy

    def objective(self, v):
        p = self.problem.params
        xl, R, _ = self.split(v)
        z = self.z(xl)
        W = (
            p.gamma * p.phi * (np.exp(self.e * xl) - np.power(p.x_min, self.e)) / self.Dx
            + p.gamma * (1 - p.phi) * (np.power(R, self.e) - np.power(p.R_min, self.e)) / self.DR
            - (1 - p.gamma) * p.varpi / (p.beta - 1) * np.power(z, p.beta - 1)
        )
        return float(W.sum())

    def gradient(self, v):
        p = self.problem.params
        xl, R, _ = self.split(v)
        x, z = np.exp(xl), self.z(xl)
        nu = (1 - p.gamma) * p.varpi * np.power(z, p.beta - 2) / self.problem.energy
        gx = p.gamma * p.phi * self.e * np.exp(self.e * xl) / self.Dx - (nu @ self.M) * x
        gR = p.gamma * (1 - p.phi) * self.e * np.power(R, -p.alpha) / self.DR
        return np.concatenate([gx, gR, np.zeros(self.P)])

    # constraints, written as g(v) >= 0

    def capacity(self, v):
        xl, _, u = self.split(v)
        C = self.problem.capacity
        return np.array([1.0 - np.exp(xl[self.src[ks]] - u[ks]).sum() / C[l] for ks, l in zip(self.links, self.link_of)])

    def capacity_jac(self, v):
        xl, _, u = self.split(v)
        C = self.problem.capacity
        J = np.zeros((len(self.links), v.size))
        for row, (ks, l) in enumerate(zip(self.links, self.link_of)):
            t = np.exp(xl[self.src[ks]] - u[ks]) / C[l]
            np.add.at(J[row], self.src[ks], -t)
            J[row, 2 * self.S + ks] = t
        return J

    def reliability(self, v):
        _, R, u = self.split(v)
        E = 0.5 * np.exp(-self.problem.params.kappa * (1.0 - np.exp(u)))
        return np.array([1.0 - E[rp].sum() - R[i] for i, rp in enumerate(self.routes)])

    def reliability_jac(self, v):
        _, _, u = self.split(v)
        k = self.problem.params.kappa
        dE = 0.5 * k * np.exp(u) * np.exp(-k * (1.0 - np.exp(u)))
        J = np.zeros((self.S, v.size))
        for i, rp in enumerate(self.routes):
            J[i, self.S + i] = -1.0
            J[i, 2 * self.S + rp] = -dE[rp]
        return J

    def primal(self, v) -> PrimalState:
        """Full primal point: ``z`` from the power model, ``c`` on the capacity frontier."""
        xl, R, u = self.split(v)
        r = np.exp(u)
        c = np.empty(self.P)
        for ks, l in zip(self.links, self.link_of):
            need = np.exp(xl[self.src[ks]]) / r[ks]
            c[ks] = need / need.sum() * self.problem.capacity[l]
        return PrimalState(x_log=xl.copy(), R=R.copy(), z=self.z(xl), r=r, c=c)

    def multipliers(self, v, active_tol=1e-9) -> tuple[DualState, float]:
        """KKT multipliers by nonnegative least squares on the free coordinates.

        Returns the full-problem prices and the stationarity residual.
        """
        p = self.problem.params
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        free = (v > lo + active_tol * np.maximum(1, np.abs(lo))) & (v < hi - active_tol * np.maximum(1, np.abs(hi)))
        g = self.gradient(v)
        A = np.vstack([self.capacity_jac(v), self.reliability_jac(v)]).T
        # grad f + A y = 0 on free coordinates, y >= 0
        y, resid = nnls(A[free], -g[free])
        eta, mu = y[: len(self.links)], y[len(self.links) :]

        xl, _, u = self.split(v)
        x, r = np.exp(xl), np.exp(u)
        lam = np.zeros(self.P)
        for ks, l, h in zip(self.links, self.link_of, eta):
            lam[ks] = h * x[self.src[ks]] / (r[ks] * self.problem.capacity[l])
        nu = (1 - p.gamma) * p.varpi * np.power(self.z(xl), p.beta - 2) / self.problem.energy
        scale = max(1.0, float(np.max(np.abs(g[free]), initial=0.0)))
        return DualState(lam=lam, mu=mu, nu=nu), float(resid) / scale


def _point_at_rates(problem: Problem, x: np.ndarray) -> PrimalState | str:
    """Capacity-tight point at rates ``x``, or the reason it is infeasible."""
    p, sets = problem.params, problem.sets
    load = np.bincount(sets.pair_link, weights=x[sets.pair_source], minlength=len(problem.capacity))
    r_link = load / problem.capacity
    if np.any(r_link[sets.pair_link] > 1.0):
        return "rates exceed link capacity"
    r = np.maximum(r_link[sets.pair_link], EPS_R)
    R_hat = problem.e2e_reliability(r)
    bad = [s for s, v, lo in zip(sets.sources, R_hat, p.R_min) if v < lo]
    if bad:
        return f"reliability floor unreachable for sources {bad}"
    return PrimalState(
        x_log=np.log(x), R=np.minimum(R_hat, p.R_max), z=problem.power(x) / problem.energy,
        r=r, c=x[sets.pair_source] / r,
    )


def feasible_point(problem: Problem) -> PrimalState:
    """A feasible point at minimum rates, or :class:`InfeasibleInstance`.

    Every source sends at ``x_min``; each link's capacity is split in
    proportion to those rates, so all flows on a link share the smallest
    code rate that fits, ``r_l = sum x_min / C_l``. This is a sufficient test:
    the instance is declared infeasible only when even these code rates break
    some reliability floor.
    """
    point = _point_at_rates(problem, problem.params.x_min)
    if isinstance(point, str):
        raise InfeasibleInstance(f"{point} at minimum rates")
    return point


def random_feasible_point(problem: Problem, rng: np.random.Generator) -> PrimalState:
    """A feasible point at log-uniformly drawn rates.

    The draw is pulled toward ``x_min`` by bisection on the blend factor
    until the capacity-tight point at those rates is feasible.
    """
    p = problem.params
    lo, hi = np.log(p.x_min), np.log(p.x_max)
    target = lo + rng.uniform(size=lo.shape) * (hi - lo)
    best = feasible_point(problem)
    a, b = 0.0, 1.0
    for _ in range(40):
        point = _point_at_rates(problem, np.exp(lo + b * (target - lo)))
        if not isinstance(point, str):
            return point if b == 1.0 else best
        point = _point_at_rates(problem, np.exp(lo + 0.5 * (a + b) * (target - lo)))
        if isinstance(point, str):
            b = 0.5 * (a + b)
        else:
            a, best = 0.5 * (a + b), point
    return best


def oracle_solve(
    problem: Problem,
    tol: float = 1e-6,
    start: PrimalState | None = None,
    max_iter: int = 2000,
    polish: int = 3,
    sqp_ftol: float = 1e-12,
) -> OracleSolution:
    """Solve the tradeoff problem centrally.

    Parameters
    ----------
    problem : Problem
        Instance bound to parameters.
    tol : float
        Relative certified gap, ``(upper_bound - value) / max(1, |value|)``,
        below which the solution counts as optimal.
    start : PrimalState, optional
        Starting point; defaults to :func:`feasible_point`.
    max_iter : int
        SQP iteration limit.
    polish : int
        Extra SQP passes tried while the certified gap exceeds ``tol``.
    sqp_ftol : float
        Objective tolerance handed to the SQP solver.

    Returns
    -------
    OracleSolution
        ``status`` is ``"optimal"`` when ``upper_bound - value`` is within
        ``tol`` relative, else ``"stalled"``; the point is feasible
        either way and ``upper_bound`` still bounds the true optimum.
    """
    base = feasible_point(problem)
    start = start or base
    red = _Reduced(problem)
    v0 = np.concatenate([start.x_log, start.R, np.log(np.clip(start.r, EPS_R, 1.0))])
    lo = np.array([b[0] for b in red.bounds])
    hi = np.array([b[1] for b in red.bounds])
    v0 = np.clip(v0, lo, hi)

    cons = [
        {"type": "ineq", "fun": red.capacity, "jac": red.capacity_jac},
        {"type": "ineq", "fun": red.reliability, "jac": red.reliability_jac},
    ]
    iterations = 0
    v = v0
    res = None
    for _ in range(3):  # warm restarts polish the SQP's final steps
        res = minimize(
            lambda w: (-red.objective(w), -red.gradient(w)),
            v, jac=True, method="SLSQP", bounds=red.bounds, constraints=cons,
            options={"maxiter": max_iter, "ftol": sqp_ftol},
        )
        iterations += int(res.nit)
        step = np.max(np.abs(res.x - v))
        v = np.clip(res.x, lo, hi)
        if res.success and step < 1e-9:
            break

    def certify(v):
        v = _restore(red, v)
        primal = red.primal(v)
        dual, stationarity = red.multipliers(v)
        return v, primal, objective_value(problem, primal), dual, stationarity, dual_function(problem, dual)

    v, primal, value, dual, stationarity, upper = certify(v)
    for _ in range(polish):
        # a loose bound usually means ambiguous multipliers at a stalled
        # point; re-solving from there settles the active set
        if upper - value <= tol * max(1.0, abs(value)):
            break
        res = minimize(
            lambda w: (-red.objective(w), -red.gradient(w)),
            v, jac=True, method="SLSQP", bounds=red.bounds, constraints=cons,
            options={"maxiter": max_iter, "ftol": sqp_ftol},
        )
        iterations += int(res.nit)
        cand = certify(np.clip(res.x, lo, hi))
        if cand[5] - cand[2] < upper - value:
            v, primal, value, dual, stationarity, upper = cand
    rs = constraint_residuals(problem, primal)
    violation = max(float(np.max(rs[k])) for k in ("capacity", "reliability", "link_budget"))
    return OracleSolution(
        primal=primal, value=value, upper_bound=upper, multipliers=dual,
        status="optimal" if upper - value <= tol * max(1.0, abs(value)) else "stalled",
        iterations=iterations,
        stationarity=stationarity, max_violation=max(violation, 0.0), message=str(res.message),
    )


def _restore(red: _Reduced, v: np.ndarray) -> np.ndarray:
    """Pull a nearly feasible SQP point back inside the constraint set.

    Rates are shrunk by the worst capacity excess and reliabilities lowered to
    the achievable end-to-end value; both moves keep every bound.
    """
    v = v.copy()
    S = red.S
    excess = -np.min(red.capacity(v))
    if excess > 0:
        v[:S] = np.maximum(v[:S] + np.log1p(-excess) if excess < 1 else v[:S], red.bounds[0][0])
    slack = red.reliability(v)
    short = slack < 0
    if np.any(short):
        v[S : 2 * S] = np.where(short, v[S : 2 * S] + slack, v[S : 2 * S])
        v[S : 2 * S] = np.maximum(v[S : 2 * S], [b[0] for b in red.bounds[S : 2 * S]])
    return v


# ---------------------------------------------------------------------------
# dual function


def dual_function(problem: Problem, dual: DualState) -> float:
    """Lagrangian maximised over the primal boxes at fixed prices.

    Node, link and code-rate terms are solved exactly by the subproblem
    solvers; the reliability prices contribute their constant ``sum(mu)``.
    """
    sets, p = problem.sets, problem.params
    src = sets.sources
    idx = {s: i for i, s in enumerate(src)}
    lam, mu, nu = (np.asarray(a, dtype=float) for a in (dual.lam, dual.mu, dual.nu))
    if np.any(lam < 0) or np.any(mu < 0) or np.any(nu < 0):
        raise ValueError("prices must be nonnegative")

    lam_e2e = np.array([lam[rp].sum() for rp in sets.route_pairs])
    K = np.array([
        nu[idx[s]] * sets.own_tx_power[idx[s]]
        + sum(nu[idx[q]] * sets.relay_power[(q, s)] for q in sets.relays_of_source[s])
        for s in src
    ])
    x_log, R, z = solve_node_subproblems(lam_e2e, mu, nu, K, problem.energy, problem.z_lo, problem.z_hi, p)
    node = node_lagrangian(x_log, R, z, lam_e2e, mu, nu, K, problem.energy, p)

    total = float(np.sum(node)) + float(np.sum(mu))
    for l in range(len(problem.capacity)):
        ks = sets.link_pairs(l)
        if ks.size == 0:
            continue
        c = solve_link_allocation(lam[ks], problem.capacity[l], EPS_C)
        total += float(np.sum(lam[ks] * np.log(c)))
    r = solve_code_rates(lam, mu[sets.pair_source], p.kappa)
    total += float(np.sum(lam * np.log(r) - mu[sets.pair_source] * error_prob(r, p.kappa)))
    return total


def duality_gap(problem: Problem, primal: PrimalState, dual: DualState, feas_tol: float = 1e-6) -> float:
    """``G(dual) - W(primal)``; nonnegative whenever ``primal`` is feasible.

    Raises :class:`InfeasiblePrimal` when a coupling constraint is violated by
    more than ``feas_tol``. The energy residual is relative, the others are in
    natural units.
    """
    rs = constraint_residuals(problem, primal)
    worst = {k: float(np.max(v)) for k, v in rs.items()}
    if any(v > feas_tol for v in worst.values()):
        raise InfeasiblePrimal({k: v for k, v in worst.items() if v > feas_tol}, feas_tol)
    return dual_function(problem, dual) - objective_value(problem, primal)


# ---------------------------------------------------------------------------
# lifetime surrogate quality


@dataclass(frozen=True)
class LifetimeComparison:
    beta: float
    maxmin_lifetime: float  # s
    surrogate_lifetime: float  # min_s T_s at the surrogate optimum, s
    gap: float  # relative shortfall of the surrogate


def _simplex_grid_search(score, lo, hi, total, points, refinements):
    """Maximise ``score(x)`` over ``lo <= x <= hi``, ``sum(x) == total``.

    The first ``n-1`` rates are gridded, the last one takes up the remainder.
    Each refinement pass re-grids a window of two cells around the incumbent.
    """
    n = lo.size
    a, b = lo[:-1].astype(float), hi[:-1].astype(float)
    best_x, best = None, -np.inf
    for _ in range(refinements + 1):
        axes = [np.linspace(ai, bi, points) for ai, bi in zip(a, b)]
        for head in itertools.product(*axes):
            head = np.array(head)
            last = total - head.sum()
            if not lo[-1] <= last <= hi[-1]:
                continue
            x = np.append(head, last)
            val = score(x)
            if val > best:
                best, best_x = val, x
        if best_x is None:
            raise ValueError("no grid point meets the total-rate requirement")
        width = (b - a) / (points - 1)
        a = np.maximum(lo[:-1], best_x[:-1] - 2 * width)
        b = np.minimum(hi[:-1], best_x[:-1] + 2 * width)
    assert best_x.size == n
    return best_x


def network_lifetime_exact_vs_beta(
    instance: NetworkInstance,
    params: TradeoffParams,
    betas=(2.0, 5.0, 9.0),
    total_rate: float | None = None,
    points: int = 200,
    refinements: int = 2,
) -> list[LifetimeComparison]:
    """How closely the beta-utility surrogate reproduces max-min lifetime.

    Every source must contribute to a fixed total rate (default: the sum of
    the box midpoints). The exact problem maximises ``min_s T_s``; the
    surrogate maximises ``sum_s T_s**(1-beta)/(1-beta)``. Both are grid
    searched over the rate allocation, and the surrogate optimum's network
    lifetime is compared with the max-min value.
    """
    S = instance.n_sources
    if S > 3:
        raise ValueError(f"instance too large for grid search ({S} sources, at most 3)")
    p = params.resolve(instance.sensor_nodes)
    M = _power_matrix(instance)
    energy = instance.energy
    if total_rate is None:
        total_rate = float(np.sum(0.5 * (p.x_min + p.x_max)))

    def lifetimes(x):
        return energy / (M @ x)

    exact_x = _simplex_grid_search(lambda x: lifetimes(x).min(), p.x_min, p.x_max, total_rate, points, refinements)
    exact = float(lifetimes(exact_x).min())

    out = []
    for beta in betas:
        if beta <= 1:
            raise ValueError("beta must exceed 1")
        # (1-beta) < 0: maximising T^(1-beta)/(1-beta) means minimising sum T^(1-beta)
        sur_x = _simplex_grid_search(
            lambda x: -np.sum(np.power(lifetimes(x) / exact, 1.0 - beta)),
            p.x_min, p.x_max, total_rate, points, refinements,
        )
        sur = float(lifetimes(sur_x).min())
        out.append(LifetimeComparison(float(beta), exact, sur, (exact - sur) / exact))
    return out
