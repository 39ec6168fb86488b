import math

import numpy as np
import pytest

from wsn_tradeoff import (
    InstanceError,
    build_instance,
    canonical_instance,
    derive_sets,
    network_lifetime,
    node_lifetime,
    node_power,
    transmit_power,
)
from wsn_tradeoff.model import power_vector

RADIO = {"psi": 50e-9, "sigma": 0.0013e-12, "theta": 4.0, "rx": 50e-9}


def doc(nodes, links, routes, radio=RADIO):
    return {"nodes": nodes, "links": links, "routes": routes, "radio": dict(radio)}


def sensor(i, e=2000.0):
    return {"id": i, "kind": "sensor", "energy": e}


SINK = {"id": "sink", "kind": "sink"}


def link(i, tail, head, cap=2.0, d=50.0):
    return {"id": i, "tail": tail, "head": head, "capacity": cap, "distance": d}


def chain():
    # 1 -> 2 -> sink, only node 1 sources traffic through 2
    return doc([sensor("1"), sensor("2"), SINK], [link("a", "1", "2"), link("b", "2", "sink")],
               {"1": ["a", "b"], "2": ["b"]})


def test_canonical_counts():
    inst = canonical_instance()
    assert inst.n_sources == 6
    assert len(inst.links) == 7


def test_canonical_sources_on_shared_link():
    sets = derive_sets(canonical_instance())
    assert sets.sources_on_link["e"] == ("1", "3", "4", "5", "6")


def test_single_link_instance():
    inst = build_instance(doc([sensor("s"), SINK], [link("l", "s", "sink")], {"s": ["l"]}))
    sets = derive_sets(inst)
    assert sets.sources_on_link["l"] == ("s",)
    assert sets.relays_of_source["s"] == ()


def test_chain_relay_sets():
    sets = derive_sets(build_instance(chain()))
    assert sets.relays_of_source["1"] == ("2",)
    assert sets.relayed_sources["2"] == ("1",)
    assert sets.hop_links[("2", "1")] == ("a", "b")


def test_capacity_converted_to_bits():
    inst = build_instance(chain())
    assert inst.link("a").capacity == pytest.approx(2e6)


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d["links"][0].update(capacity=-1.0), "links[0].capacity"),
        (lambda d: d["nodes"][0].update(energy=0.0), "nodes[0].energy"),
        (lambda d: d["links"][1].update(distance=-5.0), "links[1].distance"),
        (lambda d: d["links"][0].update(bogus=1), "links[0].bogus"),
        (lambda d: d["radio"].update(theta=5.0), "radio.theta"),
    ],
)
def test_invalid_fields_report_path(mutate, path):
    d = chain()
    mutate(d)
    with pytest.raises(InstanceError) as err:
        build_instance(d)
    assert err.value.path == path


def test_route_must_end_at_sink():
    d = doc([sensor("1"), sensor("2"), SINK], [link("a", "1", "2"), link("b", "2", "sink")], {"1": ["a"], "2": ["b"]})
    with pytest.raises(InstanceError, match="route does not terminate at sink"):
        build_instance(d)


def test_route_gap_rejected():
    d = doc([sensor("1"), sensor("2"), sensor("3"), SINK],
            [link("a", "1", "2"), link("b", "3", "sink"), link("c", "2", "sink")],
            {"1": ["a", "b"], "2": ["c"], "3": ["b"]})
    with pytest.raises(InstanceError):
        build_instance(d)


def test_duplicate_ids_rejected():
    d = chain()
    d["links"][1]["id"] = "a"
    with pytest.raises(InstanceError):
        build_instance(d)


def test_membership_duality():
    inst = canonical_instance()
    sets = derive_sets(inst)
    for s in inst.sensor_nodes:
        for l in inst.link_ids:
            assert (s in sets.sources_on_link[l]) == (l in sets.links_of_source[s])


def test_relay_hops_consecutive():
    inst = canonical_instance()
    sets = derive_sets(inst)
    for s in inst.sensor_nodes:
        route = list(inst.routes[s])
        for relay in sets.relays_of_source[s]:
            l_in, l_out = sets.hop_links[(relay, s)]
            assert route.index(l_out) == route.index(l_in) + 1
            assert sets.relay_power[(relay, s)] > 0


@pytest.mark.parametrize("d, expected", [(50.0, 58.125e-9), (100.0, 180e-9), (0.0, 50e-9)])
def test_transmit_power(d, expected):
    radio = dict(RADIO)
    inst = build_instance(doc([sensor("s"), SINK], [link("l", "s", "sink", d=max(d, 1.0))], {"s": ["l"]}, radio))
    if d == 0.0:
        # the amplifier term vanishes with distance; check the formula's constant part
        assert inst.tx_electronics == pytest.approx(expected)
        return
    assert transmit_power(inst, "s", "l") == pytest.approx(expected, rel=1e-12)


def test_transmit_power_requires_outgoing_link():
    inst = build_instance(chain())
    with pytest.raises(ValueError):
        transmit_power(inst, "2", "a")


def test_node_power_leaf():
    inst = build_instance(doc([sensor("s"), SINK], [link("l", "s", "sink")], {"s": ["l"]}))
    sets = derive_sets(inst)
    assert node_power(inst, sets, {"s": 1e6}, "s") == pytest.approx(0.058125, rel=1e-12)


def test_node_power_relay_only():
    inst = build_instance(chain())
    sets = derive_sets(inst)
    # node 2 relays 1 Mbit/s of node 1's data and sends nothing itself
    assert node_power(inst, sets, {"1": 1e6, "2": 0.0}, "2") == pytest.approx(0.108125, rel=1e-12)


def test_power_vector_matches_node_power():
    inst = canonical_instance()
    sets = derive_sets(inst)
    rng = np.random.default_rng(3)
    x = rng.uniform(1e5, 2e6, size=inst.n_sources)
    xs = dict(zip(sets.sources, x))
    expected = [node_power(inst, sets, xs, s) for s in sets.sources]
    np.testing.assert_allclose(power_vector(sets, x), expected, rtol=1e-12)


def test_node_power_linear():
    inst = canonical_instance()
    sets = derive_sets(inst)
    x = np.linspace(2e5, 7e5, inst.n_sources)
    np.testing.assert_allclose(power_vector(sets, 3.0 * x), 3.0 * power_vector(sets, x), rtol=1e-12)


def test_lifetime_definition():
    inst = build_instance(doc([sensor("s"), SINK], [link("l", "s", "sink")], {"s": ["l"]}))
    assert node_lifetime(inst, 0.1, "s") == pytest.approx(20000.0)
    with pytest.raises(ValueError, match="undefined lifetime"):
        node_lifetime(inst, 0.0, "s")


def test_network_lifetime_set_by_weakest_node():
    inst = canonical_instance()
    sets = derive_sets(inst)
    x = {s: 1e6 for s in inst.sensor_nodes}
    T = [node_lifetime(inst, node_power(inst, sets, x, s), s) for s in inst.sensor_nodes]
    assert network_lifetime(inst, sets, x) == min(T)
    doubled = {s: 2 * v for s, v in x.items()}
    assert network_lifetime(inst, sets, doubled) == pytest.approx(min(T) / 2)


def test_equal_power_lifetime_follows_energy():
    # with identical radios and loads, the 2000 J node dies first
    energies = [3000.0, 2800.0, 2500.0, 2200.0, 2600.0, 2000.0]
    nodes = [sensor(str(i + 1), e) for i, e in enumerate(energies)] + [SINK]
    links = [link(f"l{i + 1}", str(i + 1), "sink") for i in range(6)]
    inst = build_instance(doc(nodes, links, {str(i + 1): [f"l{i + 1}"] for i in range(6)}))
    sets = derive_sets(inst)
    x = {s: 1e6 for s in inst.sensor_nodes}
    p = node_power(inst, sets, x, "6")
    assert network_lifetime(inst, sets, x) == pytest.approx(2000.0 / p)


def test_derive_sets_deterministic():
    a = derive_sets(canonical_instance())
    b = derive_sets(canonical_instance())
    assert a.pairs == b.pairs
    assert np.array_equal(a.relay_matrix, b.relay_matrix)
    assert math.isclose(a.own_tx_power.sum(), b.own_tx_power.sum())
