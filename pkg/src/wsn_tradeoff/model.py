"""
Network instances: topology, single-path routes and the radio energy model.

Instances are loaded from TOML documents (see ``docs/formats.md``) and are
immutable once built. All quantities are stored in SI units: bit/s, J, W, s.
Capacities are given in Mbit/s in the document and converted on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

MBPS = 1e6


class InstanceError(ValueError):
    """Raised when an instance document is malformed or violates an invariant.

    ``path`` names the offending field, e.g. ``links[2].capacity``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass(frozen=True)
class Link:
    id: str
    tail: str
    head: str
    capacity: float  # bit/s
    distance: float  # m


@dataclass(frozen=True)
class NetworkInstance:
    """A validated sensor network with one fixed route per sensor node."""

    sensor_nodes: tuple[str, ...]
    sink_nodes: tuple[str, ...]
    links: tuple[Link, ...]
    routes: Mapping[str, tuple[str, ...]]
    initial_energy: Mapping[str, float]
    rx_energy_per_bit: float
    tx_electronics: float
    tx_amplifier: float
    path_loss_exponent: float
    name: str = ""

    def link(self, link_id: str) -> Link:
        for l in self.links:
            if l.id == link_id:
                return l
        raise KeyError(link_id)

    @property
    def link_ids(self) -> tuple[str, ...]:
        return tuple(l.id for l in self.links)

    @property
    def n_sources(self) -> int:
        return len(self.sensor_nodes)

    @property
    def energy(self) -> np.ndarray:
        return np.array([self.initial_energy[s] for s in self.sensor_nodes])

    @property
    def capacity(self) -> np.ndarray:
        return np.array([l.capacity for l in self.links])


# ---------------------------------------------------------------------------
# loading and validation

_TOP_KEYS = {"name", "nodes", "links", "routes", "radio"}
_NODE_KEYS = {"id", "kind", "energy"}
_LINK_KEYS = {"id", "tail", "head", "capacity", "distance"}
_RADIO_KEYS = {"psi", "sigma", "theta", "rx"}


def _check_keys(obj: Any, allowed: set[str], required: set[str], path: str) -> None:
    if not isinstance(obj, Mapping):
        raise InstanceError(path, "expected a table")
    for key in obj:
        if key not in allowed:
            raise InstanceError(f"{path}.{key}" if path else key, "unknown field")
    for key in sorted(required):
        if key not in obj:
            raise InstanceError(f"{path}.{key}" if path else key, "missing field")


def _positive(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError(path, "expected a number")
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InstanceError(path, f"must be strictly positive, got {value!r}")
    return value


def build_instance(raw: Mapping[str, Any]) -> NetworkInstance:
    """Validate a parsed instance document and build a :class:`NetworkInstance`.

    Parameters
    ----------
    raw : mapping
        Parsed document with ``nodes``, ``links``, ``routes`` and ``radio``
        sections. Link capacities are in Mbit/s.

    Raises
    ------
    InstanceError
        On unknown or missing fields, nonpositive parameters, duplicate
        identifiers, or routes that are not connected paths to a sink.
    """
    _check_keys(raw, _TOP_KEYS, {"nodes", "links", "routes", "radio"}, "")

    nodes = raw["nodes"]
    if not isinstance(nodes, Sequence) or not nodes:
        raise InstanceError("nodes", "expected a non-empty array of tables")
    sensors: list[str] = []
    sinks: list[str] = []
    energy: dict[str, float] = {}
    seen: set[str] = set()
    for i, node in enumerate(nodes):
        path = f"nodes[{i}]"
        _check_keys(node, _NODE_KEYS, {"id", "kind"}, path)
        nid = str(node["id"])
        if nid in seen:
            raise InstanceError(f"{path}.id", f"duplicate node id {nid!r}")
        seen.add(nid)
        kind = node["kind"]
        if kind == "sensor":
            if "energy" not in node:
                raise InstanceError(f"{path}.energy", "missing field")
            energy[nid] = _positive(node["energy"], f"{path}.energy")
            sensors.append(nid)
        elif kind == "sink":
            if "energy" in node:
                raise InstanceError(f"{path}.energy", "sink nodes carry no energy budget")
            sinks.append(nid)
        else:
            raise InstanceError(f"{path}.kind", f"expected 'sensor' or 'sink', got {kind!r}")
    if not sensors:
        raise InstanceError("nodes", "no sensor nodes")
    if not sinks:
        raise InstanceError("nodes", "no sink nodes")

    raw_links = raw["links"]
    if not isinstance(raw_links, Sequence) or not raw_links:
        raise InstanceError("links", "expected a non-empty array of tables")
    links: list[Link] = []
    link_index: dict[str, Link] = {}
    for i, item in enumerate(raw_links):
        path = f"links[{i}]"
        _check_keys(item, _LINK_KEYS, _LINK_KEYS, path)
        lid = str(item["id"])
        if lid in link_index:
            raise InstanceError(f"{path}.id", f"duplicate link id {lid!r}")
        tail, head = str(item["tail"]), str(item["head"])
        for end, nid in (("tail", tail), ("head", head)):
            if nid not in seen:
                raise InstanceError(f"{path}.{end}", f"unknown node {nid!r}")
        if tail == head:
            raise InstanceError(path, "self-loop")
        if tail in sinks:
            raise InstanceError(f"{path}.tail", "links may not leave a sink")
        link = Link(
            id=lid,
            tail=tail,
            head=head,
            capacity=_positive(item["capacity"], f"{path}.capacity") * MBPS,
            distance=_positive(item["distance"], f"{path}.distance"),
        )
        links.append(link)
        link_index[lid] = link

    raw_routes = raw["routes"]
    if not isinstance(raw_routes, Mapping):
        raise InstanceError("routes", "expected a table")
    routes: dict[str, tuple[str, ...]] = {}
    for src, hops in raw_routes.items():
        path = f"routes.{src}"
        if src not in energy:
            raise InstanceError(path, f"{src!r} is not a sensor node")
        if not isinstance(hops, Sequence) or isinstance(hops, str) or not hops:
            raise InstanceError(path, "expected a non-empty array of link ids")
        hops = tuple(str(h) for h in hops)
        at = src
        visited = {src}
        for k, lid in enumerate(hops):
            if lid not in link_index:
                raise InstanceError(f"{path}[{k}]", f"unknown link {lid!r}")
            link = link_index[lid]
            if link.tail != at:
                raise InstanceError(
                    f"{path}[{k}]", f"route is disconnected: link {lid!r} leaves {link.tail!r}, expected {at!r}"
                )
            at = link.head
            if at in visited:
                raise InstanceError(f"{path}[{k}]", f"route revisits node {at!r}")
            visited.add(at)
            if at in sinks and k != len(hops) - 1:
                raise InstanceError(f"{path}[{k}]", "route passes through a sink")
        if at not in sinks:
            raise InstanceError(path, "route does not terminate at sink")
        routes[src] = hops
    for s in sensors:
        if s not in routes:
            raise InstanceError(f"routes.{s}", "missing route for sensor node")

    radio = raw["radio"]
    _check_keys(radio, _RADIO_KEYS, _RADIO_KEYS, "radio")
    theta = _positive(radio["theta"], "radio.theta")
    if not 2.0 <= theta <= 4.0:
        raise InstanceError("radio.theta", f"path loss exponent must lie in [2, 4], got {theta}")

    return NetworkInstance(
        sensor_nodes=tuple(sensors),
        sink_nodes=tuple(sinks),
        links=tuple(links),
        routes=MappingProxyType({s: routes[s] for s in sensors}),
        initial_energy=MappingProxyType(energy),
        rx_energy_per_bit=_positive(radio["rx"], "radio.rx"),
        tx_electronics=_positive(radio["psi"], "radio.psi"),
        tx_amplifier=_positive(radio["sigma"], "radio.sigma"),
        path_loss_exponent=theta,
        name=str(raw.get("name", "")),
    )


def load_instance(path: str | Path) -> NetworkInstance:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise InstanceError("<document>", f"not valid TOML: {exc}") from exc
    return build_instance(raw)


def canonical_instance() -> NetworkInstance:
    """The bundled six-sensor, seven-link instance."""
    return load_instance(Path(__file__).parent / "data" / "canonical.toml")


# ---------------------------------------------------------------------------
# derived index sets


@dataclass(frozen=True)
class DerivedSets:
    """Index sets induced by the routes, plus a dense indexing used by solvers.

    A *pair* is a (link, source) combination with the source routed over the
    link. Pairs are numbered in link order, then source order.
    """

    sources_on_link: Mapping[str, tuple[str, ...]]
    links_of_source: Mapping[str, tuple[str, ...]]
    incoming_links: Mapping[str, tuple[str, ...]]
    outgoing_links: Mapping[str, tuple[str, ...]]
    relayed_sources: Mapping[str, tuple[str, ...]]
    relays_of_source: Mapping[str, tuple[str, ...]]
    hop_links: Mapping[tuple[str, str], tuple[str, str]]
    own_link: Mapping[str, str]
    relay_power: Mapping[tuple[str, str], float]

    sources: tuple[str, ...] = ()
    pairs: tuple[tuple[str, str], ...] = ()
    pair_link: np.ndarray = field(default=None, repr=False)
    pair_source: np.ndarray = field(default=None, repr=False)
    route_pairs: tuple[np.ndarray, ...] = field(default=(), repr=False)
    relay_matrix: np.ndarray = field(default=None, repr=False)
    own_tx_power: np.ndarray = field(default=None, repr=False)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def link_pairs(self, link_index: int) -> np.ndarray:
        return np.flatnonzero(self.pair_link == link_index)


def transmit_power(inst: NetworkInstance, s: str, link_id: str) -> float:
    """Per-bit transmit energy ``psi + sigma * d**theta`` of node ``s`` on a link it drives."""
    link = inst.link(link_id)
    if link.tail != s:
        raise ValueError(f"link {link_id!r} is not outgoing from node {s!r}")
    return inst.tx_electronics + inst.tx_amplifier * link.distance**inst.path_loss_exponent


def derive_sets(inst: NetworkInstance) -> DerivedSets:
    sources = inst.sensor_nodes
    sidx = {s: i for i, s in enumerate(sources)}
    lidx = {l.id: i for i, l in enumerate(inst.links)}

    on_link: dict[str, list[str]] = {l.id: [] for l in inst.links}
    for s in sources:
        for lid in inst.routes[s]:
            on_link[lid].append(s)

    incoming: dict[str, list[str]] = {s: [] for s in sources}
    outgoing: dict[str, list[str]] = {s: [] for s in sources}
    for l in inst.links:
        if not on_link[l.id]:
            continue
        if l.head in incoming:
            incoming[l.head].append(l.id)
        outgoing[l.tail].append(l.id)

    relayed: dict[str, list[str]] = {s: [] for s in sources}
    relays: dict[str, list[str]] = {s: [] for s in sources}
    hop_links: dict[tuple[str, str], tuple[str, str]] = {}
    relay_power: dict[tuple[str, str], float] = {}
    for s in sources:
        route = inst.routes[s]
        for k in range(1, len(route)):
            l_in, l_out = route[k - 1], route[k]
            relay = inst.link(l_out).tail
            relays[s].append(relay)
            relayed[relay].append(s)
            hop_links[(relay, s)] = (l_in, l_out)
            relay_power[(relay, s)] = inst.rx_energy_per_bit + transmit_power(inst, relay, l_out)
    for relay in relayed:
        relayed[relay].sort(key=sidx.__getitem__)

    pairs = tuple((l.id, s) for l in inst.links for s in on_link[l.id])
    pair_link = np.array([lidx[l] for l, _ in pairs], dtype=int)
    pair_source = np.array([sidx[s] for _, s in pairs], dtype=int)
    pindex = {p: k for k, p in enumerate(pairs)}
    route_pairs = tuple(np.array([pindex[(lid, s)] for lid in inst.routes[s]], dtype=int) for s in sources)

    n = len(sources)
    relay_matrix = np.zeros((n, n))
    for (relay, s), p in relay_power.items():
        relay_matrix[sidx[relay], sidx[s]] = p
    own_tx = np.array([transmit_power(inst, s, inst.routes[s][0]) for s in sources])

    freeze = lambda d: MappingProxyType({k: tuple(v) for k, v in d.items()})  # noqa: E731
    return DerivedSets(
        sources_on_link=freeze(on_link),
        links_of_source=MappingProxyType(dict(inst.routes)),
        incoming_links=freeze(incoming),
        outgoing_links=freeze(outgoing),
        relayed_sources=freeze(relayed),
        relays_of_source=freeze(relays),
        hop_links=MappingProxyType(hop_links),
        own_link=MappingProxyType({s: inst.routes[s][0] for s in sources}),
        relay_power=MappingProxyType(relay_power),
        sources=sources,
        pairs=pairs,
        pair_link=pair_link,
        pair_source=pair_source,
        route_pairs=route_pairs,
        relay_matrix=relay_matrix,
        own_tx_power=own_tx,
    )


# ---------------------------------------------------------------------------
# energy


def node_power(inst: NetworkInstance, sets: DerivedSets, x: Mapping[str, float], s: str) -> float:
    """Power drawn by sensor ``s`` (W) for per-source rates ``x`` (bit/s).

    Receive cost on every incoming link plus transmit cost on every outgoing
    link, each weighted by the flows routed over that link.
    """
    if s not in inst.initial_energy:
        raise ValueError(f"{s!r} is not a sensor node")
    p = 0.0
    for lid in sets.incoming_links[s]:
        p += sum(inst.rx_energy_per_bit * x[src] for src in sets.sources_on_link[lid])
    for lid in sets.outgoing_links[s]:
        pt = transmit_power(inst, s, lid)
        p += sum(pt * x[src] for src in sets.sources_on_link[lid])
    return p


def power_vector(sets: DerivedSets, x: np.ndarray) -> np.ndarray:
    """All node powers at once; ``x`` is indexed like ``sets.sources``.

    Accepts a trailing batch axis: ``x`` of shape (S, ...) gives (S, ...).
    """
    x = np.asarray(x, dtype=float)
    return np.tensordot(sets.relay_matrix, x, axes=1) + sets.own_tx_power.reshape((-1,) + (1,) * (x.ndim - 1)) * x


def node_lifetime(inst: NetworkInstance, p_s: float, s: str) -> float:
    if not p_s > 0:
        raise ValueError(f"undefined lifetime: node {s!r} draws no power")
    return inst.initial_energy[s] / p_s


def network_lifetime(inst: NetworkInstance, sets: DerivedSets, x: Mapping[str, float]) -> float:
    """Time until the first sensor node exhausts its battery."""
    return min(node_lifetime(inst, node_power(inst, sets, x, s), s) for s in inst.sensor_nodes)
