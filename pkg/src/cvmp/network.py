"""Static road network: links, movements, phases and the feasible signal space.

A scenario document is a JSON-compatible mapping.  ``build_network`` reads the
``links``, ``movements`` and ``nodes`` sections (plus ``od_pairs`` and
``demand_profiles`` to validate routes against turning ratios) and returns an
immutable :class:`Network`.  ``emit`` goes the other way.

Link kinds
----------
real
    Physical link with finite storage ``floor(length * lanes * jam_density)``.
source
    Zero-length fictitious entry link with unbounded storage.  Each source link
    feeds exactly one real link through an always-green fictitious node.
sink
    Network exit.  Vehicles discharged into a sink leave immediately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

MovementId = tuple[str, str]

TURN_SUM_TOL = 1e-9
ROUTE_RATIO_TOL = 1e-6


class ScenarioError(ValueError):
    """Raised for invalid or inconsistent scenario documents."""


@dataclass(frozen=True)
class Link:
    id: str
    length_m: float
    lanes: int
    free_flow_speed_mps: float
    jam_density_veh_per_m_per_lane: float
    is_source: bool = False
    is_sink: bool = False

    @property
    def unbounded_storage(self) -> bool:
        return self.is_source or self.is_sink

    @property
    def storage_capacity(self) -> float:
        """N_max in vehicles; ``inf`` for source and sink links."""
        if self.unbounded_storage:
            return math.inf
        return math.floor(self.length_m * self.lanes * self.jam_density_veh_per_m_per_lane + 1e-9)

    @property
    def spacing_m(self) -> float:
        return 1.0 / self.jam_density_veh_per_m_per_lane

    @property
    def kind(self) -> str:
        if self.is_source:
            return "source"
        if self.is_sink:
            return "sink"
        return "real"


@dataclass(frozen=True)
class Movement:
    in_link: str
    out_link: str
    saturation_flow_c: float
    turning_ratio_r: float
    free_flow_travel_time_s: float

    @property
    def id(self) -> MovementId:
        return (self.in_link, self.out_link)


@dataclass(frozen=True)
class Phase:
    id: str
    node: str
    movements: tuple[MovementId, ...]


@dataclass(frozen=True)
class Node:
    id: str
    phases: tuple[Phase, ...]
    movements: tuple[MovementId, ...]
    is_source: bool = False


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-constant arrival rate; ``rates[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``."""

    id: str
    breakpoints_s: tuple[float, ...]
    rates_veh_s: tuple[float, ...]

    def rate(self, t: float) -> float:
        k = 0
        for k_next, b in enumerate(self.breakpoints_s):
            if b <= t:
                k = k_next
            else:
                break
        return self.rates_veh_s[k]

    def mean_rate(self, horizon_s: float) -> float:
        if horizon_s <= 0:
            return self.rates_veh_s[0]
        total = 0.0
        edges = list(self.breakpoints_s) + [math.inf]
        for k, rate in enumerate(self.rates_veh_s):
            lo, hi = edges[k], min(edges[k + 1], horizon_s)
            if hi > lo:
                total += rate * (hi - lo)
        return total / horizon_s

    def peak_rate(self, horizon_s: float) -> float:
        return max(r for b, r in zip(self.breakpoints_s, self.rates_veh_s) if b < max(horizon_s, 1e-12))


@dataclass(frozen=True)
class ODPair:
    id: str
    route: tuple[str, ...]
    profile: str
    scale: float = 1.0
    group: str | None = None

    @property
    def source(self) -> str:
        return self.route[0]

    @property
    def movements(self) -> tuple[MovementId, ...]:
        return tuple(zip(self.route[:-1], self.route[1:]))


@dataclass(frozen=True)
class Network:
    name: str
    links: dict[str, Link]
    movements: dict[MovementId, Movement]
    nodes: dict[str, Node]
    _index: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self) -> None:
        out_of: dict[str, list[MovementId]] = {lid: [] for lid in self.links}
        into: dict[str, list[MovementId]] = {lid: [] for lid in self.links}
        for mid in self.movements:
            out_of[mid[0]].append(mid)
            into[mid[1]].append(mid)
        node_of = {m: n.id for n in self.nodes.values() for m in n.movements}
        index = {
            "out_of": {k: tuple(v) for k, v in out_of.items()},
            "into": {k: tuple(v) for k, v in into.items()},
            "node_of": node_of,
        }
        object.__setattr__(self, "_index", index)

    def movements_from(self, link_id: str) -> tuple[MovementId, ...]:
        return self._index["out_of"][link_id]

    def movements_into(self, link_id: str) -> tuple[MovementId, ...]:
        return self._index["into"][link_id]

    def node_of(self, movement: MovementId) -> str:
        return self._index["node_of"][movement]

    @property
    def real_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes.values() if not n.is_source)

    @property
    def source_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes.values() if n.is_source)

    @property
    def real_links(self) -> tuple[Link, ...]:
        return tuple(l for l in self.links.values() if not l.unbounded_storage)

    @property
    def source_links(self) -> tuple[Link, ...]:
        return tuple(l for l in self.links.values() if l.is_source)

    def is_source_movement(self, movement: MovementId) -> bool:
        return self.links[movement[0]].is_source

    def downstream(self, movement: MovementId) -> tuple[MovementId, ...]:
        """Movements (o, k) leaving the outgoing link of ``movement``; empty for sinks."""
        return self.movements_from(movement[1])


def source_node_id(source_link: str) -> str:
    return f"F:{source_link}"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ScenarioError(msg)


def _movement_key(raw: Any) -> MovementId:
    if isinstance(raw, str):
        parts = raw.split("->")
        _require(len(parts) == 2, f"bad movement reference {raw!r}")
        return (parts[0].strip(), parts[1].strip())
    _require(isinstance(raw, (list, tuple)) and len(raw) == 2, f"bad movement reference {raw!r}")
    return (str(raw[0]), str(raw[1]))


def parse_links(raw_links: Sequence[Mapping[str, Any]]) -> dict[str, Link]:
    links: dict[str, Link] = {}
    for raw in raw_links:
        kind = raw.get("kind", "real")
        _require(kind in ("real", "source", "sink"), f"link {raw.get('id')!r}: unknown kind {kind!r}")
        lid = str(raw["id"])
        _require(lid not in links, f"duplicate link id {lid!r}")
        length = float(raw.get("length_m", 0.0))
        lanes = int(raw.get("lanes", 1))
        speed = float(raw.get("free_flow_speed_mps", 13.89))
        jam = float(raw.get("jam_density_veh_per_m_per_lane", 1 / 7.5))
        _require(lanes >= 1, f"link {lid!r}: lanes must be >= 1")
        _require(speed > 0, f"link {lid!r}: free_flow_speed_mps must be > 0")
        if kind == "real":
            _require(length > 0, f"link {lid!r}: zero-length real link")
            _require(0 < jam < math.inf, f"link {lid!r}: jam density must be finite and > 0")
            _require(length * lanes * jam >= 1, f"link {lid!r}: storage below one vehicle")
        else:
            _require(length == 0, f"link {lid!r}: {kind} links have no physical length")
            jam = math.inf
        links[lid] = Link(lid, length, lanes, speed, jam, kind == "source", kind == "sink")
    return links


def parse_profiles(raw_profiles: Sequence[Mapping[str, Any]]) -> dict[str, DemandProfile]:
    profiles: dict[str, DemandProfile] = {}
    for raw in raw_profiles:
        pid = str(raw["id"])
        bps = tuple(float(b) for b in raw["breakpoints_s"])
        rates = tuple(float(r) for r in raw["rates_veh_s"])
        _require(len(bps) == len(rates) and len(bps) > 0, f"profile {pid!r}: breakpoints/rates mismatch")
        _require(bps[0] == 0.0, f"profile {pid!r}: first breakpoint must be 0")
        _require(all(a < b for a, b in zip(bps, bps[1:])), f"profile {pid!r}: breakpoints must increase")
        _require(all(r >= 0 for r in rates), f"profile {pid!r}: negative rate")
        profiles[pid] = DemandProfile(pid, bps, rates)
    return profiles


def parse_od_pairs(raw_ods: Sequence[Mapping[str, Any]]) -> dict[str, ODPair]:
    ods: dict[str, ODPair] = {}
    for raw in raw_ods:
        oid = str(raw["id"])
        _require(oid not in ods, f"duplicate od id {oid!r}")
        route = tuple(str(l) for l in raw["route"])
        _require(len(route) >= 2, f"od {oid!r}: route needs at least a source and a sink")
        scale = float(raw.get("scale", 1.0))
        _require(scale >= 0, f"od {oid!r}: negative scale")
        group = raw.get("group")
        ods[oid] = ODPair(oid, route, str(raw["profile"]), scale, None if group is None else str(group))
    return ods


def movement_flows(
    movements: Mapping[MovementId, Any],
    ods: Mapping[str, ODPair],
    profiles: Mapping[str, DemandProfile],
    horizon_s: float,
    *,
    stat: str = "mean",
) -> dict[MovementId, float]:
    """Route-propagated mean (or peak) demand per movement in veh/s."""
    flows = {mid: 0.0 for mid in movements}
    for od in ods.values():
        prof = profiles[od.profile]
        lam = prof.mean_rate(horizon_s) if stat == "mean" else prof.peak_rate(horizon_s)
        for mid in od.movements:
            flows[mid] += od.scale * lam
    return flows


def build_network(config: Mapping[str, Any]) -> Network:
    """Validate a scenario document and return the immutable :class:`Network`.

    Turning ratios may be given per movement or omitted, in which case they are
    derived from the route table weighted by mean OD demand over the horizon.
    When given, they must sum to 1 per incoming link and agree with the
    route-induced fractions wherever the link carries demand.
    """
    _require(isinstance(config, Mapping), "scenario document must be a mapping")
    links = parse_links(config.get("links", []))
    _require(links, "no links")

    raw_movements = config.get("movements", [])
    specs: dict[MovementId, Mapping[str, Any]] = {}
    for raw in raw_movements:
        _require(str(raw["in"]) in links, f"movement {raw['in']}->{raw['out']}: dangling link {raw['in']!r}")
        _require(str(raw["out"]) in links, f"movement {raw['in']}->{raw['out']}: dangling link {raw['out']!r}")
        mid = (str(raw["in"]), str(raw["out"]))
        _require(mid not in specs, f"duplicate movement {mid}")
        _require(not links[mid[0]].is_sink, f"movement {mid}: cannot leave a sink link")
        _require(not links[mid[1]].is_source, f"movement {mid}: cannot enter a source link")
        c = float(raw["saturation_flow_veh_s"])
        _require(c > 0, f"movement {mid}: saturation flow must be > 0")
        specs[mid] = raw

    out_of: dict[str, list[MovementId]] = {lid: [] for lid in links}
    for mid in specs:
        out_of[mid[0]].append(mid)
    for lid, link in links.items():
        if link.is_source:
            _require(len(out_of[lid]) == 1, f"source link {lid!r} must feed exactly one real link")
            _require(not links[out_of[lid][0][1]].unbounded_storage, f"source link {lid!r} must feed a real link")
        elif not link.is_sink:
            _require(out_of[lid], f"real link {lid!r} has no outgoing movement and is not a sink")

    profiles = parse_profiles(config.get("demand_profiles", []))
    ods = parse_od_pairs(config.get("od_pairs", []))
    for od in ods.values():
        _require(od.profile in profiles, f"od {od.id!r}: dangling profile {od.profile!r}")
        _require(all(l in links for l in od.route), f"od {od.id!r}: dangling link in route")
        _require(links[od.route[0]].is_source, f"od {od.id!r}: route must start at a source link")
        _require(links[od.route[-1]].is_sink, f"od {od.id!r}: route must end at a sink link")
        for mid in od.movements:
            _require(mid in specs, f"od {od.id!r}: route uses unknown movement {mid}")

    horizon = float(config.get("sim", {}).get("horizon_s", 3600.0))
    flows = movement_flows(specs, ods, profiles, horizon)
    ratios: dict[MovementId, float] = {}
    for lid, mids in out_of.items():
        if not mids:
            continue
        if links[lid].is_source:
            ratios[mids[0]] = 1.0
            continue
        link_flow = sum(flows[m] for m in mids)
        given = [specs[m].get("turning_ratio") for m in mids]
        if all(g is not None for g in given):
            vals = [float(g) for g in given]
            _require(all(0.0 <= v <= 1.0 for v in vals), f"link {lid!r}: turning ratios outside [0,1]")
            _require(
                abs(sum(vals) - 1.0) <= TURN_SUM_TOL,
                f"link {lid!r}: turning ratios sum to {sum(vals):.12g}, not 1",
            )
            if link_flow > 0:
                for m, v in zip(mids, vals):
                    induced = flows[m] / link_flow
                    _require(
                        abs(induced - v) <= ROUTE_RATIO_TOL,
                        f"movement {m}: configured turning ratio {v} != route-induced {induced:.9f}",
                    )
            ratios.update(zip(mids, vals))
        else:
            _require(all(g is None for g in given), f"link {lid!r}: turning ratios partially specified")
            if len(mids) == 1:
                ratios[mids[0]] = 1.0
                continue
            _require(link_flow > 0, f"link {lid!r}: turning ratios missing and no route demand to derive them")
            for m in mids:
                ratios[m] = flows[m] / link_flow

    movements: dict[MovementId, Movement] = {}
    for mid, raw in specs.items():
        lin = links[mid[0]]
        tau_bar = 1.0 if lin.is_source else lin.length_m / lin.free_flow_speed_mps
        movements[mid] = Movement(mid[0], mid[1], float(raw["saturation_flow_veh_s"]), ratios[mid], tau_bar)

    nodes: dict[str, Node] = {}
    owner: dict[MovementId, str] = {}
    for raw_node in config.get("nodes", []):
        nid = str(raw_node["id"])
        _require(nid not in nodes and not nid.startswith("F:"), f"bad or duplicate node id {nid!r}")
        phases: list[Phase] = []
        seen_sets: set[frozenset] = set()
        for raw_phase in raw_node.get("phases", []):
            pid = str(raw_phase["id"])
            members = tuple(_movement_key(m) for m in raw_phase.get("movements", []))
            _require(members, f"node {nid!r}: empty phase {pid!r}")
            for m in members:
                _require(m in movements, f"node {nid!r} phase {pid!r}: dangling movement {m}")
                _require(not links[m[0]].is_source, f"node {nid!r}: source movement {m} in a real node")
                _require(owner.get(m, nid) == nid, f"movement {m} appears in nodes {owner.get(m)!r} and {nid!r}")
                owner[m] = nid
            key = frozenset(members)
            _require(key not in seen_sets, f"node {nid!r}: duplicate phase {pid!r}")
            seen_sets.add(key)
            _require(pid not in {p.id for p in phases}, f"node {nid!r}: duplicate phase id {pid!r}")
            phases.append(Phase(pid, nid, members))
        _require(phases, f"node {nid!r}: no phases")
        node_movs = tuple(m for m in movements if owner.get(m) == nid)
        nodes[nid] = Node(nid, tuple(phases), node_movs)

    for mid in movements:
        if links[mid[0]].is_source:
            nid = source_node_id(mid[0])
            nodes[nid] = Node(nid, (Phase("green", nid, (mid,)),), (mid,), is_source=True)
        else:
            _require(mid in owner, f"movement {mid} belongs to no phase")

    return Network(str(config.get("name", "network")), links, movements, nodes)


def feasible_signal_vectors(network: Network, node: str) -> list[tuple[int, ...]]:
    """One binary vector per phase, indexed by ``network.nodes[node].movements``."""
    n = network.nodes[node]
    vectors = []
    for phase in n.phases:
        members = set(phase.movements)
        vectors.append(tuple(1 if m in members else 0 for m in n.movements))
    return vectors


def emit(network: Network) -> dict[str, Any]:
    """Topology sections of a scenario document (round-trips through ``build_network``)."""
    links = []
    for l in network.links.values():
        raw: dict[str, Any] = {"id": l.id, "kind": l.kind, "length_m": l.length_m, "lanes": l.lanes,
                               "free_flow_speed_mps": l.free_flow_speed_mps}
        if l.kind == "real":
            raw["jam_density_veh_per_m_per_lane"] = l.jam_density_veh_per_m_per_lane
        links.append(raw)
    movements = [
        {"in": m.in_link, "out": m.out_link, "saturation_flow_veh_s": m.saturation_flow_c,
         "turning_ratio": m.turning_ratio_r}
        for m in network.movements.values()
    ]
    nodes = [
        {"id": n.id, "phases": [{"id": p.id, "movements": [list(m) for m in p.movements]} for p in n.phases]}
        for n in network.real_nodes
    ]
    return {"name": network.name, "links": links, "movements": movements, "nodes": nodes}
