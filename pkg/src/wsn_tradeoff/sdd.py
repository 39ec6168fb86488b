"""
Subgradient dual decomposition, run as synchronous message-passing rounds.

Each round every sensor node and every link solves its own subproblem at the
current prices, exchanges the results with its route neighbours, and the
three price families take a projected subgradient step::

    lam[l,s] <- max(0, lam[l,s] - delta(t) * (log c[l,s] + log r[l,s] - log x[s]))
    mu[s]    <- max(0, mu[s] - zeta(t) * (1 - sum_l E(r[l,s]) - R[s]))
    nu[s]    <- max(0, nu[s] - vartheta(t) * (e[s] * z[s] - p[s](x)))

Agents only touch data carried along route relationships. Reductions are
done over padded neighbour tables in a fixed order, so running the agents
batched or one per thread yields bitwise identical results.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from .model import DerivedSets, NetworkInstance, derive_sets
from .objective import PER_SOURCE, PrimalState, TradeoffParams, combined_objective_log
from .subproblems import EPS_C, EPS_R, TOL, _allocate, solve_code_rates, solve_node_subproblems

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# problem data


def _padded(rows: list[list[int]], weights: list[list[float]] | None = None):
    width = max((len(r) for r in rows), default=0) or 1
    idx = np.zeros((len(rows), width), dtype=int)
    w = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        idx[i, : len(r)] = r
        w[i, : len(r)] = 1.0 if weights is None else weights[i]
    return idx, w


def _gather_sum(values: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    # column-by-column accumulation: fixed order per row, independent of batch
    acc = np.zeros(idx.shape[0])
    for k in range(idx.shape[1]):
        acc = acc + w[:, k] * values[idx[:, k]]
    return acc


@dataclass(frozen=True)
class Problem:
    """An instance bound to a parameter set, with the index tables the agents use."""

    instance: NetworkInstance
    sets: DerivedSets
    params: TradeoffParams  # resolved over sets.sources
    energy: np.ndarray
    capacity: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    route_idx: np.ndarray = field(repr=False)
    route_w: np.ndarray = field(repr=False)
    relays_idx: np.ndarray = field(repr=False)  # source -> relays, weighted by relay power
    relays_w: np.ndarray = field(repr=False)
    relayed_idx: np.ndarray = field(repr=False)  # relay -> relayed sources, weighted
    relayed_w: np.ndarray = field(repr=False)
    link_idx: np.ndarray = field(repr=False)  # link -> pairs
    link_w: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, instance: NetworkInstance, params: TradeoffParams) -> "Problem":
        sets = derive_sets(instance)
        src = sets.sources
        sidx = {s: i for i, s in enumerate(src)}
        resolved = params.resolve(src)

        route_idx, route_w = _padded([list(r) for r in sets.route_pairs])
        relays = [[sidx[q] for q in sets.relays_of_source[s]] for s in src]
        relays_p = [[sets.relay_power[(q, s)] for q in sets.relays_of_source[s]] for s in src]
        relays_idx, relays_w = _padded(relays, relays_p)
        relayed = [[sidx[q] for q in sets.relayed_sources[s]] for s in src]
        relayed_p = [[sets.relay_power[(s, q)] for q in sets.relayed_sources[s]] for s in src]
        relayed_idx, relayed_w = _padded(relayed, relayed_p)
        link_idx, link_w = _padded([list(sets.link_pairs(i)) for i in range(len(instance.links))])

        energy = instance.energy
        p_lo = _gather_sum(resolved.x_min, relayed_idx, relayed_w) + sets.own_tx_power * resolved.x_min
        p_hi = _gather_sum(resolved.x_max, relayed_idx, relayed_w) + sets.own_tx_power * resolved.x_max
        return cls(
            instance=instance, sets=sets, params=resolved,
            energy=energy, capacity=instance.capacity,
            z_lo=p_lo / energy, z_hi=p_hi / energy,
            route_idx=route_idx, route_w=route_w,
            relays_idx=relays_idx, relays_w=relays_w,
            relayed_idx=relayed_idx, relayed_w=relayed_w,
            link_idx=link_idx, link_w=link_w,
        )

    @property
    def n_sources(self) -> int:
        return len(self.sets.sources)

    @property
    def n_pairs(self) -> int:
        return self.sets.n_pairs

    def power(self, x: np.ndarray, rows=slice(None)) -> np.ndarray:
        """Node powers (W) at rates ``x``: relayed traffic plus own traffic."""
        return _gather_sum(x, self.relayed_idx[rows], self.relayed_w[rows]) + self.sets.own_tx_power[rows] * x[rows]

    def e2e_reliability(self, r: np.ndarray, rows=slice(None)) -> np.ndarray:
        e = 0.5 * np.exp(-self.params.kappa * (1.0 - r))
        return 1.0 - _gather_sum(e, self.route_idx[rows], self.route_w[rows])

    def params_for(self, rows) -> TradeoffParams:
        p = self.params
        return dataclasses.replace(p, **{k: getattr(p, k)[rows] for k in PER_SOURCE})


# ---------------------------------------------------------------------------
# states, schedules, messages


@dataclass
class DualState:
    lam: np.ndarray  # per pair
    mu: np.ndarray  # per source
    nu: np.ndarray  # per source

    def copy(self) -> "DualState":
        return DualState(self.lam.copy(), self.mu.copy(), self.nu.copy())

    def as_dict(self, sources, pairs) -> dict:
        return {
            "lambda": {f"{l},{s}": v for (l, s), v in zip(pairs, self.lam.tolist())},
            "mu": dict(zip(sources, self.mu.tolist())),
            "nu": dict(zip(sources, self.nu.tolist())),
        }


@dataclass(frozen=True)
class StepsizeSchedule:
    """Step ``a / (b + t)``, or the constant ``a`` for diagnostics.

    ``harmonic`` and ``scaled-harmonic`` share the formula; the scaled kind
    additionally multiplies by a per-agent ``scale`` vector supplied at call
    time (used to put energy prices on a per-node footing).
    """

    kind: str = "harmonic"
    a: float = 1.0
    b: float = 50.0

    def __post_init__(self):
        if self.kind not in ("harmonic", "scaled-harmonic", "constant"):
            raise ValueError(f"unknown stepsize kind {self.kind!r}")
        if not self.a > 0 or self.b < 0:
            raise ValueError("need a > 0 and b >= 0")

    def __call__(self, t: int, scale=1.0):
        if self.kind == "constant":
            return self.a
        step = self.a / (self.b + t)
        return step * scale if self.kind == "scaled-harmonic" else step


@dataclass(frozen=True)
class Schedules:
    """Step schedules for the three price families, plus restart points.

    At every iteration listed in ``restarts`` each agent restarts its price
    from its average over the second half of the finished stage and resets
    its step scale (see :func:`price_scales`); the harmonic counter restarts
    as well. An empty ``restarts`` gives one uninterrupted stage.
    """

    delta: StepsizeSchedule = StepsizeSchedule("scaled-harmonic", 5.0, 50.0)
    zeta: StepsizeSchedule = StepsizeSchedule("scaled-harmonic", 5.0, 50.0)
    vartheta: StepsizeSchedule = StepsizeSchedule("scaled-harmonic", 5.0, 50.0)
    restarts: tuple[int, ...] = (250, 500, 1000, 2000)

    def __post_init__(self):
        if any(t <= 0 for t in self.restarts) or list(self.restarts) != sorted(set(self.restarts)):
            raise ValueError("restarts must be increasing positive iteration indices")


@dataclass(frozen=True)
class PriceScales:
    """Per-agent multipliers applied to scaled-harmonic steps."""

    lam: np.ndarray  # per pair
    mu: np.ndarray  # per source
    nu: np.ndarray  # per source

    @classmethod
    def uniform(cls, problem: "Problem") -> "PriceScales":
        """Unit scales for congestion and reliability, ``1/e_s`` for energy."""
        return cls(np.ones(problem.n_pairs), np.ones(problem.n_sources), 1.0 / problem.energy)


@dataclass(frozen=True)
class StopRule:
    """Stop when the averaged objective settles and the averaged point is tight.

    Converged means: relative change of the averaged objective over
    ``window`` rounds below ``tol``, the averaged primal's capacity,
    reliability and energy violations below ``residual_tol``, and the gap between the dual
    value at the averaged prices and the averaged objective below
    ``gap_tol`` relative. The gap check certifies optimality; the other two
    alone can settle on a feasible but suboptimal point.
    """

    max_iters: int = 5000
    window: int = 100
    tol: float = 1e-5
    min_iters: int = 200
    residual_tol: float = 1e-4
    gap_tol: float = 1e-4


@dataclass
class RoundMessages:
    """Payloads exchanged in one round, keyed by (sender, receiver)."""

    link_to_node_price: dict = field(default_factory=dict)  # (l, s) -> lam[l,s]
    link_to_node_code_rate: dict = field(default_factory=dict)  # (l, s) -> r[l,s]
    node_to_link_rate: dict = field(default_factory=dict)  # (s, l) -> x[s]
    node_to_link_mu: dict = field(default_factory=dict)  # (s, l) -> mu[s]
    relay_to_source_nu: dict = field(default_factory=dict)  # (relay, s) -> nu[relay]
    source_to_relay_rate: dict = field(default_factory=dict)  # (s, relay) -> x[s]


def _marginal_log_rate_utility(problem: Problem, x: np.ndarray) -> np.ndarray:
    p = problem.params
    e = 1.0 - p.alpha
    return p.gamma * p.phi * e * np.power(x, e) / (np.power(p.x_max, e) - np.power(p.x_min, e))


def local_price_estimates(problem: Problem, x: np.ndarray) -> DualState:
    """Prices each agent would hold if ``x`` were optimal, from local data only.

    * energy: the price at which the node's power term settles at the power
      drawn under ``x``, ``(1-gamma) varpi z**(beta-2) / e`` with ``z = p(x)/e``;
    * reliability: the marginal reliability utility at ``R_max``;
    * congestion: the code-rate stationarity ``mu r E'(r)`` at the smallest
      code rate that fits the link's load under ``x``.
    """
    p, sets = problem.params, problem.sets
    z = problem.power(x) / problem.energy
    nu = (1.0 - p.gamma) * p.varpi * np.power(z, p.beta - 2.0) / problem.energy
    e = 1.0 - p.alpha
    mu = p.gamma * (1.0 - p.phi) * e * np.power(p.R_max, -p.alpha) / (np.power(p.R_max, e) - np.power(p.R_min, e))
    r = _capacity_tight_rates(problem, x)
    mu_pair = mu[sets.pair_source]
    lam = mu_pair * r * 0.5 * p.kappa * np.exp(-p.kappa * (1.0 - r))
    return DualState(lam=lam, mu=mu, nu=nu)


def _capacity_tight_rates(problem: Problem, x: np.ndarray) -> np.ndarray:
    sets = problem.sets
    load = np.bincount(sets.pair_link, weights=x[sets.pair_source], minlength=len(problem.capacity))
    return np.clip(load / problem.capacity, EPS_R, 1.0)[sets.pair_link]


def _reference_point(problem: Problem, x: np.ndarray) -> PrimalState:
    # the point local_price_estimates assumes: tight links, full reliability
    return PrimalState(
        x_log=np.log(x),
        R=np.array(problem.params.R_max, dtype=float),
        z=problem.power(x) / problem.energy,
        r=_capacity_tight_rates(problem, x),
        c=np.empty(problem.n_pairs),
    )


def price_scales(problem: Problem, dual: DualState, primal: PrimalState, fallback: DualState,
                 floor_rel: float = 1e-6) -> PriceScales:
    """Step scales matched to each price's local sensitivity.

    A price moves its own constraint residual at a rate inversely
    proportional to its size: ``d log r / d lam ~ 1/(lam (kappa r + 1))``,
    ``d log z / d nu = 1/((beta-2) nu)``, while the reliability residual
    moves by ``R/alpha + sum(r E'(r)/(kappa r + 1))`` per unit ``log mu``.
    Scaling each step by the reciprocal of that slope puts every agent on the
    same footing. Prices that are zero take the local ``fallback`` estimate,
    bounded below by ``floor_rel`` times the node's marginal log-rate utility.
    """
    p, sets = problem.params, problem.sets
    floor = floor_rel * _marginal_log_rate_utility(problem, primal.x)

    def base(price, est, fl):
        return np.where(price > fl, price, np.maximum(est, fl))

    lam = base(dual.lam, fallback.lam, floor[sets.pair_source])
    mu = base(dual.mu, fallback.mu, floor)
    nu = base(dual.nu, fallback.nu, 0.0)
    curv = p.beta - 2.0 if p.beta > 2.0 else 1.0
    # reliability residual moves through R and through the route's code rates
    r = primal.r
    hop = 0.5 * p.kappa * np.exp(-p.kappa * (1.0 - r)) * r / (p.kappa * r + 1.0)
    via_r = np.array([hop[list(ks)].sum() for ks in sets.route_pairs])
    via_R = primal.R / p.alpha
    return PriceScales(
        lam=lam * (p.kappa * primal.r + 1.0),
        mu=mu / (via_R + via_r),
        nu=nu * curv / (problem.energy * primal.z),
    )


def initial_state(problem: Problem, mode: str = "local") -> tuple[PrimalState, DualState]:
    """Starting primal and dual state.

    The primal starts at the box midpoints (geometric for the rate). With
    ``mode="local"`` prices start at :func:`local_price_estimates` for that
    rate; ``mode="uniform"`` uses unit congestion and reliability prices and
    energy prices ``1e-2 * mean(p^t)``.
    """
    p = problem.params
    sets = problem.sets
    n_on_link = np.bincount(sets.pair_link, minlength=len(problem.capacity))
    x_log = 0.5 * (np.log(p.x_min) + np.log(p.x_max))
    primal = PrimalState(
        x_log=x_log,
        R=0.5 * (p.R_min + p.R_max),
        z=problem.power(np.exp(x_log)) / problem.energy,
        r=np.full(problem.n_pairs, 0.5),
        c=problem.capacity[sets.pair_link] / n_on_link[sets.pair_link],
    )
    if mode == "local":
        return primal, local_price_estimates(problem, primal.x)
    if mode != "uniform":
        raise ValueError(f"unknown initial mode {mode!r}")
    nu0 = 1e-2 * float(np.mean(sets.own_tx_power))
    dual = DualState(
        lam=np.ones(problem.n_pairs),
        mu=np.ones(problem.n_sources),
        nu=np.full(problem.n_sources, nu0),
    )
    return primal, dual


# ---------------------------------------------------------------------------
# one round


def _node_solve(problem: Problem, dual: DualState, rows):
    lam_e2e = _gather_sum(dual.lam, problem.route_idx[rows], problem.route_w[rows])
    K = _gather_sum(dual.nu, problem.relays_idx[rows], problem.relays_w[rows]) + dual.nu[rows] * problem.sets.own_tx_power[rows]
    return solve_node_subproblems(
        lam_e2e, dual.mu[rows], dual.nu[rows], K, problem.energy[rows],
        problem.z_lo[rows], problem.z_hi[rows], problem.params_for(rows), TOL,
    )


def _link_solve(problem: Problem, dual: DualState, link: int):
    pairs = problem.link_idx[link][problem.link_w[link] > 0]
    c = _allocate(dual.lam[pairs], problem.capacity[link], EPS_C)
    mu = dual.mu[problem.sets.pair_source[pairs]]
    r = solve_code_rates(dual.lam[pairs], mu, problem.params.kappa, EPS_R, TOL)
    return pairs, c, r


def _all_links_solve(problem: Problem, dual: DualState):
    sets = problem.sets
    c = np.empty(problem.n_pairs)
    for link in range(len(problem.capacity)):
        pairs = problem.link_idx[link][problem.link_w[link] > 0]
        if pairs.size:
            c[pairs] = _allocate(dual.lam[pairs], problem.capacity[link], EPS_C)
    r = solve_code_rates(dual.lam, dual.mu[sets.pair_source], problem.params.kappa, EPS_R, TOL)
    return c, r


def run_round(
    problem: Problem,
    primal: PrimalState,
    dual: DualState,
    schedules: Schedules,
    t: int,
    executor: Executor | None = None,
    record: bool = False,
    scales: PriceScales | None = None,
) -> tuple[PrimalState, DualState, RoundMessages | None]:
    """Advance one synchronous round from prices at step index ``t``.

    Node and link agents first respond to the current prices (these two
    phases are independent and may run concurrently); then every agent
    updates its own price from the responses it received. With an
    ``executor`` each agent is submitted as its own task. ``primal`` (the
    previous round's responses) carries no information into the round; it
    is accepted so callers can thread state uniformly.
    """
    S, sets = problem.n_sources, problem.sets
    scales = scales or PriceScales.uniform(problem)

    if executor is None:
        x_log, R, z = _node_solve(problem, dual, slice(None))
        c, r = _all_links_solve(problem, dual)
    else:
        node_futs = {i: executor.submit(_node_solve, problem, dual, np.array([i])) for i in range(S)}
        link_futs = {l: executor.submit(_link_solve, problem, dual, l) for l in range(len(problem.capacity))}
        x_log, R, z = np.empty(S), np.empty(S), np.empty(S)
        c, r = np.empty(problem.n_pairs), np.empty(problem.n_pairs)
        for i, fut in sorted(node_futs.items()):
            xi, Ri, zi = fut.result()
            x_log[i], R[i], z[i] = xi[0], Ri[0], zi[0]
        for l, fut in sorted(link_futs.items()):
            pairs, cl, rl = fut.result()
            c[pairs], r[pairs] = cl, rl

    new_primal = PrimalState(x_log=x_log, R=R, z=z, r=r, c=c)
    x = np.exp(x_log)

    R_hat = problem.e2e_reliability(r)
    mu = np.maximum(0.0, dual.mu - schedules.zeta(t, scales.mu) * (R_hat - R))
    nu = np.maximum(0.0, dual.nu - schedules.vartheta(t, scales.nu) * (problem.energy * z - problem.power(x)))
    lam = np.maximum(0.0, dual.lam - schedules.delta(t, scales.lam) * (np.log(c) + np.log(r) - x_log[sets.pair_source]))
    new_dual = DualState(lam=lam, mu=mu, nu=nu)

    messages = _messages(problem, dual, new_primal, new_dual) if record else None
    return new_primal, new_dual, messages


def _messages(problem: Problem, dual: DualState, primal: PrimalState, new_dual: DualState) -> RoundMessages:
    sets = problem.sets
    idx = {s: i for i, s in enumerate(sets.sources)}
    x = primal.x
    m = RoundMessages()
    for k, (l, s) in enumerate(sets.pairs):
        i = idx[s]
        m.link_to_node_price[(l, s)] = float(dual.lam[k])
        m.link_to_node_code_rate[(l, s)] = float(primal.r[k])
        m.node_to_link_rate[(s, l)] = float(x[i])
        m.node_to_link_mu[(s, l)] = float(new_dual.mu[i])
    for s in sets.sources:
        for relay in sets.relays_of_source[s]:
            m.relay_to_source_nu[(relay, s)] = float(new_dual.nu[idx[relay]])
            m.source_to_relay_rate[(s, relay)] = float(x[idx[s]])
    return m


# ---------------------------------------------------------------------------
# residuals and objective


def dual_value(problem: Problem, dual: DualState) -> float:
    """Lagrangian maximised over the primal boxes at fixed prices.

    Sums the agents' own best-response values, so it is an upper bound on
    the optimum for any nonnegative prices.
    """
    p, sets = problem.params, problem.sets
    rows = slice(None)
    lam_e2e = _gather_sum(dual.lam, problem.route_idx, problem.route_w)
    K = _gather_sum(dual.nu, problem.relays_idx, problem.relays_w) + dual.nu * sets.own_tx_power
    x_log, R, z = _node_solve(problem, dual, rows)
    node = combined_objective_log(x_log, R, z, p) - lam_e2e * x_log - dual.mu * R + dual.nu * problem.energy * z - K * np.exp(x_log)
    c, r = _all_links_solve(problem, dual)
    mu_pair = dual.mu[sets.pair_source]
    links = dual.lam * (np.log(c) + np.log(r)) - mu_pair * 0.5 * np.exp(-p.kappa * (1.0 - r))
    return float(np.sum(node) + np.sum(dual.mu) + np.sum(links))


def constraint_residuals(problem: Problem, primal: PrimalState) -> dict[str, np.ndarray]:
    """Signed residuals of the coupling constraints; positive means violated.

    ``capacity``: ``log x - log r - log c`` per pair.
    ``reliability``: ``R - (1 - sum E(r))`` per source.
    ``energy``: ``(p(x) - e z) / (e z)`` per source.
    ``link_budget``: ``(sum c - C) / C`` per link.
    """
    sets = problem.sets
    ez = problem.energy * primal.z
    budget = np.bincount(sets.pair_link, weights=primal.c, minlength=len(problem.capacity))
    return {
        "capacity": primal.x_log[sets.pair_source] - np.log(primal.r) - np.log(primal.c),
        "reliability": primal.R - problem.e2e_reliability(primal.r),
        "energy": (problem.power(primal.x) - ez) / ez,
        "link_budget": (budget - problem.capacity) / problem.capacity,
    }


def objective_value(problem: Problem, primal: PrimalState) -> float:
    return float(np.sum(combined_objective_log(primal.x_log, primal.R, primal.z, problem.params)))


# ---------------------------------------------------------------------------
# full solve


@dataclass
class SolveTrace:
    """Per-iteration history of an SDD run.

    Row ``k`` holds the agents' responses and the updated prices after
    ``k`` rounds; row 0 is the starting state. ``average`` is the suffix
    average over the second half of the final stage, taken in the convex
    variables (log-rate, reliability, normalised power, code rate, capacity
    share); ``dual_average`` is the matching average of the prices.
    """

    problem: Problem
    x_log: np.ndarray
    R: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    objective: np.ndarray
    avg_objective: np.ndarray
    residual_capacity: np.ndarray
    residual_reliability: np.ndarray
    residual_energy: np.ndarray
    status: str
    iterations: int
    stage_starts: tuple[int, ...]
    average: PrimalState
    dual_average: DualState
    last: PrimalState
    dual: DualState

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.x_log)


def trace_columns(problem: Problem) -> list[str]:
    """Column names of :func:`write_trace_csv`, in output order."""
    src = problem.sets.sources
    return (
        ["t"]
        + [f"x_{s}" for s in src]
        + [f"R_{s}" for s in src]
        + [f"T_{s}" for s in src]
        + [f"lambda_{l}_{s}" for l, s in problem.sets.pairs]
        + [f"mu_{s}" for s in src]
        + [f"nu_{s}" for s in src]
        + ["objective", "avg_objective", "res_capacity", "res_reliability", "res_energy"]
    )


def write_trace_csv(trace: SolveTrace, fh) -> None:
    """Write one row per round to an open text file.

    Rates in bit/s, lifetimes ``1/z`` in seconds, residuals as the largest
    absolute residual of each family. Floats use ``repr`` so equal traces
    give equal bytes.
    """
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(trace_columns(trace.problem))
    x = np.exp(trace.x_log)
    T = 1.0 / trace.z
    for k in range(trace.iterations + 1):
        row = [k, *x[k], *trace.R[k], *T[k], *trace.lam[k], *trace.mu[k], *trace.nu[k],
               trace.objective[k], trace.avg_objective[k], trace.residual_capacity[k],
               trace.residual_reliability[k], trace.residual_energy[k]]
        w.writerow([v if isinstance(v, int) else repr(float(v)) for v in row])


_PRIMAL = ("x_log", "R", "z", "r", "c")
_DUAL = ("lam", "mu", "nu")


def _window_average(cums: dict[str, np.ndarray], start: int, t: int) -> dict[str, np.ndarray]:
    # rows start+1 .. t belong to the stage; average the later half
    n = (t - start + 1) // 2
    return {k: (v[t] - v[t - n]) / n for k, v in cums.items()}


def sdd_solve(
    problem: Problem,
    schedules: Schedules | None = None,
    init: tuple[PrimalState, DualState] | None = None,
    stop: StopRule | None = None,
    executor: Executor | None = None,
    scales: PriceScales | None = None,
) -> SolveTrace:
    """Iterate :func:`run_round` until the averaged primal settles.

    Parameters
    ----------
    problem : Problem
    schedules : Schedules, optional
        Step schedules and restart points.
    init : (PrimalState, DualState), optional
        Starting point; :func:`initial_state` by default.
    stop : StopRule, optional
    executor : concurrent.futures.Executor, optional
        Runs every agent of a round as its own task. Results are identical
        to the batched path.
    scales : PriceScales, optional
        First-stage step scales; by default matched to the starting prices
        by :func:`price_scales`.

    Returns
    -------
    SolveTrace
        ``status`` is ``"converged"`` or ``"max_iters"``; hitting the
        iteration limit is not an error.
    """
    schedules = schedules or Schedules()
    stop = stop or StopRule()
    primal, dual = init if init is not None else initial_state(problem)
    primal, dual = primal.copy(), dual.copy()
    if scales is None:
        scales = price_scales(problem, dual, _reference_point(problem, primal.x), local_price_estimates(problem, primal.x))

    T, S, P = stop.max_iters, problem.n_sources, problem.n_pairs
    width = {"x_log": S, "R": S, "z": S, "mu": S, "nu": S, "r": P, "c": P, "lam": P}
    hist = {k: np.empty((T + 1, n)) for k, n in width.items()}
    cums = {k: np.zeros((T + 1, n)) for k, n in width.items()}
    obj = np.empty(T + 1)
    avg_obj = np.empty(T + 1)
    res = {k: np.empty(T + 1) for k in ("capacity", "reliability", "energy")}

    def record(k, pr: PrimalState, du: DualState):
        for name in _PRIMAL:
            hist[name][k] = getattr(pr, name)
        for name in _DUAL:
            hist[name][k] = getattr(du, name)
        obj[k] = objective_value(problem, pr)
        rs = constraint_residuals(problem, pr)
        for name in res:
            res[name][k] = float(np.max(np.abs(rs[name])))

    def averages(start, t):
        avg = _window_average(cums, start, t)
        return PrimalState(**{k: avg[k] for k in _PRIMAL}), DualState(**{k: avg[k] for k in _DUAL})

    record(0, primal, dual)
    avg_obj[0] = obj[0]
    status = "max_iters"
    restarts = [r for r in schedules.restarts if r < T]
    stage_starts = [0]
    start = t = 0
    while t < T:
        primal, dual, _ = run_round(problem, primal, dual, schedules, t - start, executor, scales=scales)
        t += 1
        record(t, primal, dual)
        for name in cums:
            cums[name][t] = cums[name][t - 1] + hist[name][t]
        avg_primal, avg_dual = averages(start, t)
        avg_obj[t] = objective_value(problem, avg_primal)

        if restarts and t == restarts[0]:
            restarts.pop(0)
            fallback = local_price_estimates(problem, avg_primal.x)
            scales = price_scales(problem, avg_dual, avg_primal, fallback)
            dual = avg_dual
            start = t
            stage_starts.append(t)
            continue

        if t >= max(stop.min_iters, start + stop.window):
            ref = avg_obj[t - stop.window]
            if abs(avg_obj[t] - ref) <= stop.tol * max(abs(avg_obj[t]), 1e-12):
                rs = constraint_residuals(problem, avg_primal)
                if max(float(np.max(rs[k])) for k in ("capacity", "reliability", "energy")) <= stop.residual_tol:
                    gap = dual_value(problem, avg_dual) - avg_obj[t]
                    if abs(gap) <= stop.gap_tol * max(1.0, abs(avg_obj[t])):
                        status = "converged"
                        break

    if status != "converged":
        log.info("SDD stopped at max_iters=%d without meeting tol=%g", T, stop.tol)
    n = t + 1
    average, dual_average = averages(start, t) if t > start else (primal.copy(), dual.copy())
    return SolveTrace(
        problem=problem,
        **{k: hist[k][:n] for k in width},
        objective=obj[:n], avg_objective=avg_obj[:n],
        residual_capacity=res["capacity"][:n],
        residual_reliability=res["reliability"][:n],
        residual_energy=res["energy"][:n],
        status=status, iterations=t, stage_starts=tuple(stage_starts),
        average=average, dual_average=dual_average,
        last=primal, dual=dual,
    )


# ---------------------------------------------------------------------------
# standalone price updates (the formulas used inside run_round)


def update_congestion_price(lam: float, step: float, c: float, r: float, x: float) -> float:
    return max(0.0, lam - step * (np.log(c) + np.log(r) - np.log(x)))


def update_reliability_price(mu: float, step: float, r_route, R: float, kappa: float) -> float:
    R_hat = 1.0 - float(np.sum(0.5 * np.exp(-kappa * (1.0 - np.asarray(r_route, float)))))
    return max(0.0, mu - step * (R_hat - R))


def update_energy_price(nu: float, step: float, e_s: float, z_s: float, x_s: float, own_tx: float,
                        relayed_rates=(), relay_powers=()) -> float:
    """Energy price step for one node: ``e z`` against relayed plus own transmit power."""
    power = x_s * own_tx + sum(xq * pq for xq, pq in zip(relayed_rates, relay_powers))
    return max(0.0, nu - step * (e_s * z_s - power))
