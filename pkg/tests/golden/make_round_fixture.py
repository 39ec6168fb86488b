"""Regenerate ``round_fixture.json``: one message-passing round, written out longhand.

Deliberately shares no code with the package. It parses the canonical
instance file itself and solves each agent's problem in closed form or with
``scipy.optimize.brentq`` on the derivative. It then applies the three price
updates with the default schedules at unit step scales (``1/e_s`` for energy).
Run it from the repository root::

    python tests/golden/make_round_fixture.py
"""

import json
import math
import sys
from pathlib import Path

from scipy.optimize import brentq

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

ROOT = Path(__file__).resolve().parents[2]
INSTANCE = ROOT / "src" / "wsn_tradeoff" / "data" / "canonical.toml"
OUT = Path(__file__).with_name("round_fixture.json")

GAMMA, PHI = 0.8, 0.8
VARPI, ALPHA, BETA, KAPPA = 3.2768e32, 1.1, 9.0, 20.0
X_MIN, X_MAX, R_MIN, R_MAX = 0.1e6, 2.0e6, 0.9, 1.0
EPS_R = 1e-9
A, B = 5.0, 50.0  # step a / (b + t) for all three price families


def load():
    doc = tomllib.loads(INSTANCE.read_text())
    radio = doc["radio"]
    energy = {n["id"]: n["energy"] for n in doc["nodes"] if n["kind"] == "sensor"}
    links = {l["id"]: l for l in doc["links"]}
    ptx = {lid: radio["psi"] + radio["sigma"] * l["distance"] ** radio["theta"] for lid, l in links.items()}
    return doc["routes"], energy, links, ptx, radio["rx"]


def argmax_by_derivative(d, lo, hi):
    if d(hi) >= 0:
        return hi
    if d(lo) <= 0:
        return lo
    return brentq(d, lo, hi, xtol=1e-15, rtol=4 * sys.float_info.epsilon, maxiter=500)


def one_round(routes, energy, links, ptx, rx, lam, mu, nu, t):
    sources = sorted(routes)
    # relay s2 of source s: the node at the tail of every link after the first
    relay_cost = {s: [(links[l]["tail"], rx + ptx[l]) for l in routes[s][1:]] for s in sources}
    own = {s: ptx[routes[s][0]] for s in sources}

    def power(x, q):
        total = own[q] * x[q]
        for s in sources:
            total += sum(w * x[s] for relay, w in relay_cost[s] if relay == q)
        return total

    e = 1 - ALPHA
    Dx = X_MAX**e - X_MIN**e
    DR = R_MAX**e - R_MIN**e

    x, R, z = {}, {}, {}
    x_min_load = {q: power({s: X_MIN for s in sources}, q) for q in sources}
    x_max_load = {q: power({s: X_MAX for s in sources}, q) for q in sources}
    for s in sources:
        lam_e2e = sum(lam[f"{l},{s}"] for l in routes[s])
        K = nu[s] * own[s] + sum(nu[relay] * w for relay, w in relay_cost[s])
        du = lambda u: GAMMA * PHI * e * math.exp(e * u) / Dx - lam_e2e - K * math.exp(u)  # noqa: E731
        x[s] = math.exp(argmax_by_derivative(du, math.log(X_MIN), math.log(X_MAX)))
        w_rel = GAMMA * (1 - PHI) * e / DR
        R[s] = R_MAX if mu[s] <= 0 else min(R_MAX, max(R_MIN, (w_rel / mu[s]) ** (1 / ALPHA)))
        z_lo, z_hi = x_min_load[s] / energy[s], x_max_load[s] / energy[s]
        z_star = (nu[s] * energy[s] / ((1 - GAMMA) * VARPI)) ** (1 / (BETA - 2))
        z[s] = min(z_hi, max(z_lo, z_star))

    c, r = {}, {}
    for lid, link in links.items():
        users = [s for s in sources if lid in routes[s]]
        total = sum(lam[f"{lid},{s}"] for s in users)
        for s in users:
            key = f"{lid},{s}"
            c[key] = link["capacity"] * 1e6 * lam[key] / total
            d = lambda q: lam[key] / q - mu[s] * 0.5 * KAPPA * math.exp(-KAPPA * (1 - q))  # noqa: E731
            r[key] = argmax_by_derivative(d, EPS_R, 1.0)

    step = A / (B + t)
    new_lam = {k: max(0.0, v - step * (math.log(c[k]) + math.log(r[k]) - math.log(x[k.split(",")[1]])))
               for k, v in lam.items()}
    new_mu, new_nu = {}, {}
    for s in sources:
        R_hat = 1 - sum(0.5 * math.exp(-KAPPA * (1 - r[f"{l},{s}"])) for l in routes[s])
        new_mu[s] = max(0.0, mu[s] - step * (R_hat - R[s]))
        new_nu[s] = max(0.0, nu[s] - step / energy[s] * (energy[s] * z[s] - power(x, s)))
    return {"x": x, "R": R, "z": z, "c": c, "r": r, "lambda": new_lam, "mu": new_mu, "nu": new_nu}


def main():
    routes, energy, links, ptx, rx = load()
    sources = sorted(routes)
    pairs = [f"{l},{s}" for s in sources for l in routes[s]]
    mean_ptx = sum(ptx[routes[s][0]] for s in sources) / len(sources)
    cases = [
        {
            "name": "uniform-start",
            "t": 0,
            "lambda": {k: 1.0 for k in pairs},
            "mu": {s: 1.0 for s in sources},
            "nu": {s: 1e-2 * mean_ptx for s in sources},
        },
        {
            "name": "interior",
            "t": 0,
            "lambda": {k: 0.1 for k in pairs},
            "mu": {s: 1.55 for s in sources},
            "nu": {s: 1e-4 for s in sources},
        },
        {
            "name": "mixed",
            "t": 7,
            "lambda": {k: 0.01 + 0.015 * i for i, k in enumerate(pairs)},
            "mu": {s: 0.5 + 0.4 * i for i, s in enumerate(sources)},
            "nu": {s: 2e-5 * (1 + i) for i, s in enumerate(sources)},
        },
    ]
    for case in cases:
        case["expected"] = one_round(routes, energy, links, ptx, rx, case["lambda"], case["mu"], case["nu"], case["t"])
    OUT.write_text(json.dumps({"gamma": GAMMA, "phi": PHI, "cases": cases}, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
