import math

import numpy as np
import pytest

from wsn_tradeoff import build_instance, canonical_instance
from wsn_tradeoff.objective import PrimalState, TradeoffParams, combined_objective, rate_utility
from wsn_tradeoff.oracle import (
    InfeasibleInstance,
    InfeasiblePrimal,
    dual_function,
    duality_gap,
    feasible_point,
    network_lifetime_exact_vs_beta,
    oracle_solve,
    random_feasible_point,
)
from wsn_tradeoff.sdd import DualState, Problem, constraint_residuals, dual_value

RADIO = {"psi": 50e-9, "sigma": 0.0013e-12, "theta": 4.0, "rx": 50e-9}


def star(energies, capacity=2.0, distance=50.0):
    """Sources wired straight to the sink, one link each."""
    ids = [str(i + 1) for i in range(len(energies))]
    return build_instance({
        "nodes": [{"id": i, "kind": "sensor", "energy": e} for i, e in zip(ids, energies)] + [{"id": "sink", "kind": "sink"}],
        "links": [{"id": f"l{i}", "tail": i, "head": "sink", "capacity": capacity, "distance": distance} for i in ids],
        "routes": {i: [f"l{i}"] for i in ids},
        "radio": dict(RADIO),
    })


@pytest.fixture(scope="module")
def canonical08():
    problem = Problem.build(canonical_instance(), TradeoffParams(gamma=0.8, phi=0.8))
    return problem, oracle_solve(problem)


def coordinate_grid_value(problem, points=5, sweeps=40, shrink=0.6):
    """Coordinate-refined grid search over log-rates and per-link capacity weights.

    Code rates are set tight (``r = x / c``), reliabilities to what the code
    rates deliver and normalised power to the drawn power, so every visited
    point is feasible by construction.
    """
    p, sets = problem.params, problem.sets
    S, P = problem.n_sources, problem.n_pairs
    lo = np.concatenate([np.log(p.x_min), np.full(P, -3.0)])
    hi = np.concatenate([np.log(p.x_max), np.full(P, 3.0)])

    def value(v):
        x, w = np.exp(v[:S]), np.exp(v[S:])
        total = np.bincount(sets.pair_link, weights=w, minlength=len(problem.capacity))
        c = w / total[sets.pair_link] * problem.capacity[sets.pair_link]
        r = x[sets.pair_source] / c
        if np.any(r > 1):
            return -np.inf
        R_hat = 1.0 - np.array([np.sum(0.5 * np.exp(-p.kappa * (1 - r[list(ks)]))) for ks in sets.route_pairs])
        if np.any(R_hat < p.R_min):
            return -np.inf
        z = problem.power(x) / problem.energy
        return float(np.sum(combined_objective(x, np.minimum(R_hat, p.R_max), z, p)))

    v = np.concatenate([np.log(p.x_min), np.zeros(P)])
    best = value(v)
    width = hi - lo
    for _ in range(sweeps):
        for k in range(v.size):
            for t in np.linspace(v[k] - width[k] / 2, v[k] + width[k] / 2, points):
                cand = v.copy()
                cand[k] = np.clip(t, lo[k], hi[k])
                val = value(cand)
                if val > best:
                    best, v = val, cand
        width *= shrink
    return best


def test_canonical_certified(canonical08):
    _, sol = canonical08
    assert sol.status == "optimal"
    assert 0 <= sol.gap <= 1e-6 * max(1.0, abs(sol.value))
    assert sol.max_violation <= 1e-9


def test_canonical_matches_grid_search(canonical08):
    problem, sol = canonical08
    grid = coordinate_grid_value(problem)
    assert abs(sol.value - grid) <= 5e-3 * abs(grid)
    assert grid <= sol.upper_bound + 1e-9


def test_solution_is_feasible(canonical08):
    problem, sol = canonical08
    rs = constraint_residuals(problem, sol.primal)
    for name in ("capacity", "reliability", "link_budget"):
        assert np.max(rs[name]) <= 1e-9
    p = problem.params
    assert np.all(sol.primal.x >= p.x_min * (1 - 1e-12)) and np.all(sol.primal.x <= p.x_max * (1 + 1e-12))


def test_multistart_invariance(canonical08):
    problem, sol = canonical08
    rng = np.random.default_rng(11)
    for _ in range(4):
        other = oracle_solve(problem, start=random_feasible_point(problem, rng))
        assert other.status == "optimal"
        assert abs(other.value - sol.value) <= 2 * 1e-6 * max(1.0, abs(sol.value))


def test_random_feasible_points_are_feasible(canonical08):
    problem, _ = canonical08
    rng = np.random.default_rng(2)
    for _ in range(10):
        point = random_feasible_point(problem, rng)
        rs = constraint_residuals(problem, point)
        assert max(np.max(rs[k]) for k in ("capacity", "reliability", "energy", "link_budget")) <= 1e-9


def test_zero_gamma_sends_at_minimum_rate():
    inst = canonical_instance()
    problem = Problem.build(inst, TradeoffParams(gamma=0.0, phi=0.5))
    sol = oracle_solve(problem)
    np.testing.assert_allclose(sol.primal.x, problem.params.x_min, rtol=1e-6)
    min_load_lifetime = np.min(problem.energy / problem.power(problem.params.x_min))
    assert np.min(sol.primal.lifetime) == pytest.approx(min_load_lifetime, rel=1e-6)


def tiny_problem():
    # one source, one 1 Mbit/s link, rate utility only
    return Problem.build(star([2000.0], capacity=1.0), TradeoffParams(gamma=1.0, phi=1.0))


def tiny_analytic(problem):
    """Closed-form optimum and multipliers of :func:`tiny_problem`.

    The reliability floor caps the code rate at ``E(r) = 1 - R_min``; the
    link is then full, so ``x = C r``. The congestion price equals the
    marginal log-rate utility and the code-rate stationarity
    ``lam / r = mu E'(r)`` gives the reliability price.
    """
    p = problem.params
    kappa, C = p.kappa, float(problem.capacity[0])
    r = 1.0 - math.log(0.5 / (1.0 - 0.9)) / kappa
    x = C * r
    e = 1.0 - p.alpha
    lam = 1.0 * e * x**e / (2e6**e - 0.1e6**e)
    mu = lam / (r * 0.5 * kappa * math.exp(-kappa * (1 - r)))
    primal = PrimalState(
        x_log=np.array([math.log(x)]), R=np.array([0.9]),
        z=problem.power(np.array([x])) / problem.energy, r=np.array([r]), c=np.array([C]),
    )
    return primal, DualState(np.array([lam]), np.array([mu]), np.array([0.0])), float(rate_utility(x, p)[0])


def test_tiny_instance_analytic_optimum():
    problem = tiny_problem()
    primal, dual, W = tiny_analytic(problem)
    sol = oracle_solve(problem)
    assert sol.value == pytest.approx(W, abs=1e-8)
    assert sol.primal.x[0] == pytest.approx(primal.x[0], rel=1e-6)


def test_tiny_instance_gap_at_optimal_multipliers():
    problem = tiny_problem()
    primal, dual, _ = tiny_analytic(problem)
    assert abs(duality_gap(problem, primal, dual)) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_weak_duality_random_prices(canonical08, seed):
    problem, sol = canonical08
    rng = np.random.default_rng(seed)
    dual = DualState(
        lam=rng.exponential(0.1, problem.n_pairs),
        mu=rng.exponential(1.0, problem.n_sources),
        nu=10 ** rng.uniform(-7, -3, problem.n_sources),
    )
    assert duality_gap(problem, sol.primal, dual, feas_tol=1e-8) >= 0


def test_dual_function_two_routes_agree(canonical08):
    problem, sol = canonical08
    rng = np.random.default_rng(4)
    for _ in range(5):
        dual = DualState(rng.uniform(0, 0.3, problem.n_pairs), rng.uniform(0, 3, problem.n_sources),
                         10 ** rng.uniform(-7, -3, problem.n_sources))
        assert dual_function(problem, dual) == pytest.approx(dual_value(problem, dual), rel=1e-12)


def test_dual_function_rejects_negative_prices(canonical08):
    problem, sol = canonical08
    bad = sol.multipliers.copy()
    bad.mu[0] = -1.0
    with pytest.raises(ValueError):
        dual_function(problem, bad)


def test_duality_gap_rejects_infeasible_primal(canonical08):
    problem, sol = canonical08
    point = sol.primal.copy()
    point.x_log = point.x_log + 0.5
    with pytest.raises(InfeasiblePrimal) as err:
        duality_gap(problem, point, sol.multipliers)
    assert "capacity" in err.value.residuals


def test_infeasible_instance_detected():
    problem = Problem.build(star([2000.0], capacity=0.05), TradeoffParams())
    with pytest.raises(InfeasibleInstance):
        feasible_point(problem)
    with pytest.raises(InfeasibleInstance):
        oracle_solve(problem)


def test_symmetric_pair_surrogate_is_exact():
    # beta = 2 is left out: the surrogate is then linear in the rates and every split ties
    rows = network_lifetime_exact_vs_beta(star([2000.0, 2000.0]), TradeoffParams(), betas=(3.0, 5.0, 9.0))
    for row in rows:
        assert abs(row.gap) <= 1e-6


def surrogate_gap_closed_form(e1, e2, beta, total, lo, hi):
    """Two independent leaf sources with equal per-bit power, total rate fixed.

    Max-min lifetime splits the rate in proportion to energy. The surrogate
    splits it in proportion to ``e**((beta-1)/(beta-2))``; at ``beta = 2``
    it is linear and loads the richer node up to its box.
    """
    if beta == 2:
        x1 = min(hi, total - lo)
    else:
        k = (beta - 1) / (beta - 2)
        x1 = total * e1**k / (e1**k + e2**k)
    x2 = total - x1
    exact = (e1 + e2) / total
    return 1 - min(e1 / x1, e2 / x2) / exact


def test_asymmetric_pair_against_closed_form():
    inst = star([2500.0, 2000.0])
    rows = network_lifetime_exact_vs_beta(inst, TradeoffParams(), betas=(2.0, 5.0, 9.0))
    for row in rows:
        expected = surrogate_gap_closed_form(2500.0, 2000.0, row.beta, 2.1e6, 0.1e6, 2.0e6)
        assert row.gap == pytest.approx(expected, abs=1e-3)
    gaps = [row.gap for row in rows]
    assert gaps[0] > gaps[1] > gaps[2]


def test_lifetime_comparison_limits_size():
    with pytest.raises(ValueError):
        network_lifetime_exact_vs_beta(canonical_instance(), TradeoffParams())


def test_slack_capacity_has_zero_congestion_price():
    # without reliability utility and with a wide link, capacity never binds
    problem = Problem.build(star([2000.0], capacity=100.0), TradeoffParams(gamma=0.8, phi=1.0))
    sol = oracle_solve(problem)
    # code rates are not unique here, but a full-rate code leaves room on the link
    assert np.exp(sol.primal.x_log[0]) < 0.1 * problem.capacity[0]
    assert np.all(sol.multipliers.lam <= 1e-6)
