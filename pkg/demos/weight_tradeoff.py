"""Walk through the rate / reliability / lifetime tradeoff on the canonical network.

For three weight settings the distributed solver runs to convergence and is
checked against the centralised oracle. The printout shows how raising the
weights buys rate at the cost of network lifetime.

    python demos/weight_tradeoff.py
"""

import numpy as np

from wsn_tradeoff import Problem, TradeoffParams, canonical_instance, oracle_solve, sdd_solve
from wsn_tradeoff.sdd import objective_value


def main():
    instance = canonical_instance()
    print(f"{'weights':>8} {'iters':>6} {'W (sdd)':>10} {'W (oracle)':>10} {'lifetime h':>10}  rates (Mbit/s)")
    for w in (0.5, 0.8, 0.97):
        problem = Problem.build(instance, TradeoffParams(gamma=w, phi=w))
        trace = sdd_solve(problem)
        opt = oracle_solve(problem)
        x = trace.average.x
        life = np.min(problem.energy / problem.power(x)) / 3600
        rates = " ".join(f"{v / 1e6:.3f}" for v in x)
        print(f"{w:>8} {trace.iterations:>6} {objective_value(problem, trace.average):>10.5f} "
              f"{opt.value:>10.5f} {life:>10.2f}  {rates}")


if __name__ == "__main__":
    main()
