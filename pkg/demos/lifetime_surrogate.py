"""How well the beta-utility surrogate tracks max-min network lifetime.

Two sensors with unequal batteries share a fixed total rate. The exact
objective balances their lifetimes; the surrogate only approaches that
balance as beta grows.

    python demos/lifetime_surrogate.py
"""

from importlib import resources

from wsn_tradeoff import TradeoffParams, load_instance, network_lifetime_exact_vs_beta


def main():
    path = resources.files("wsn_tradeoff").joinpath("data/asymmetric_2source.toml")
    rows = network_lifetime_exact_vs_beta(load_instance(path), TradeoffParams(), betas=(2, 3, 5, 9, 15, 25))
    print(f"max-min lifetime: {rows[0].maxmin_lifetime:.1f} s")
    for r in rows:
        print(f"beta={r.beta:>4g}  surrogate lifetime {r.surrogate_lifetime:9.1f} s  gap {r.gap:7.2%}")


if __name__ == "__main__":
    main()
