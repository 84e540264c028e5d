"""Vehicle-resolved mesoscopic link/queue simulator.

Each real link is a free-flow advection segment feeding a vertical stopline
queue.  Queued vehicles stand at ``L - (rank / lanes) * spacing`` where rank is
their position in the link-level join order and ``spacing = 1 / jam_density``;
they creep forward as the queue ahead discharges, never faster than free flow.
Each movement keeps its own FIFO at the stopline and discharges at most
``min(accumulated capacity, queued demand, receiving space)`` vehicles per
tick.  Capacity accrues in a fractional accumulator so that saturation flows
below one vehicle per tick are honoured exactly over time.

Times are continuous inside a tick: a vehicle that reaches an empty stopline
part-way through a tick and is released crosses at that instant, and starts the
next link with the remaining part of the tick already driven.  An unimpeded
vehicle therefore needs exactly the sum of its links' free-flow times.

Source links hold an unbounded FIFO backlog of injected vehicles.  Vehicles
that cannot enter their first link because it is full stay there; the backlog
size is the spillover count.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .metrics import CompletedVehicle, MetricsSeries
from .network import MovementId, Network
from .observe import tag_vehicle
from .scenario import Scenario

EPS = 1e-9


class ConservationError(RuntimeError):
    """Internal invariant breach: vehicles created or destroyed."""


class Vehicle:
    __slots__ = (
        "vid", "od", "route", "leg", "is_cv", "inject_time", "entry_time",
        "x", "queued", "stop_time", "free_flow_s", "link_delays",
    )

    def __init__(self, vid: int, od: str, route: tuple[str, ...], is_cv: bool, inject_time: float) -> None:
        self.vid = vid
        self.od = od
        self.route = route
        self.leg = 0
        self.is_cv = is_cv
        self.inject_time = inject_time
        self.entry_time = inject_time
        self.x = 0.0
        self.queued = False
        self.stop_time = inject_time
        self.free_flow_s = 0.0
        self.link_delays: list[tuple[str, float]] = []

    @property
    def current_link(self) -> str:
        return self.route[self.leg]

    @property
    def movement(self) -> MovementId:
        return (self.route[self.leg], self.route[self.leg + 1])

    def delay(self, t: float, speed: float) -> float:
        """Delay on the current link: elapsed time minus free-flow time to ``x``."""
        return (t - self.entry_time) - self.x / speed

    def __repr__(self) -> str:
        return f"Vehicle({self.vid}, {self.current_link}, x={self.x:.1f}, cv={self.is_cv})"


class LinkState:
    __slots__ = (
        "id", "length", "lanes", "spacing", "speed", "capacity", "transit", "queue", "detector_x",
        "entry_headway", "next_entry",
    )

    def __init__(self, link, detector_m: float) -> None:
        self.id = link.id
        self.length = link.length_m
        self.lanes = link.lanes
        self.spacing = link.spacing_m
        self.speed = link.free_flow_speed_mps
        self.capacity = link.storage_capacity
        self.transit: list[Vehicle] = []  # moving, front (largest x) first
        self.queue: list[Vehicle] = []  # queued, link-level join order
        self.detector_x = max(self.length - detector_m, 0.0)
        # one jam slot at free-flow speed: inflow never exceeds jam density x speed x lanes
        self.entry_headway = self.spacing / self.lanes / self.speed
        self.next_entry = -math.inf

    @property
    def count(self) -> int:
        return len(self.transit) + len(self.queue)

    def queue_back(self, n_queued: int | None = None) -> float:
        n = len(self.queue) if n_queued is None else n_queued
        return self.length - (n / self.lanes) * self.spacing

    def vehicles_front_first(self) -> Iterator[Vehicle]:
        yield from self.queue
        yield from self.transit


@dataclass(frozen=True)
class SignalDecision:
    """Green movements for one tick and their capacity multipliers (switch discount)."""

    green: frozenset[MovementId]
    factor: Mapping[MovementId, float] = field(default_factory=dict)

    @classmethod
    def from_phases(
        cls,
        network: Network,
        phases: Mapping[str, str | None],
        factors: Mapping[str, float] | None = None,
    ) -> "SignalDecision":
        green = set()
        factor: dict[MovementId, float] = {}
        for nid, pid in phases.items():
            if pid is None:
                continue
            phase = next(p for p in network.nodes[nid].phases if p.id == pid)
            f = 1.0 if factors is None else factors.get(nid, 1.0)
            for m in phase.movements:
                green.add(m)
                if f != 1.0:
                    factor[m] = f
        return cls(frozenset(green), factor)


@dataclass(frozen=True)
class Transfer:
    vehicle: Vehicle
    movement: MovementId
    cross_time: float


@dataclass
class SimState:
    network: Network
    scenario: Scenario
    dt: float
    clock: float
    tick: int
    links: dict[str, LinkState]
    mqueues: dict[MovementId, deque]
    acc: dict[MovementId, float]
    backlog: dict[str, deque]
    rng_demand: np.random.Generator
    rng_cv: np.random.Generator
    od_xi: list[float]
    injected: int = 0
    exited: int = 0
    next_vid: int = 0
    last_actuation: dict[MovementId, float] = field(default_factory=dict)
    events: list[tuple[int, int, str]] | None = None
    series: MetricsSeries = field(default_factory=MetricsSeries)

    @classmethod
    def initial(
        cls,
        scenario: Scenario,
        *,
        seed: int | None = None,
        record_events: bool = False,
        detector_m: float = 30.0,
    ) -> "SimState":
        net = scenario.network
        seed = scenario.sim.seed if seed is None else seed
        links = {l.id: LinkState(l, detector_m) for l in net.real_links}
        mqueues = {m: deque() for m in net.movements if not net.is_source_movement(m)}
        return cls(
            network=net,
            scenario=scenario,
            dt=scenario.sim.dt_s,
            clock=0.0,
            tick=0,
            links=links,
            mqueues=mqueues,
            acc={m: 0.0 for m in net.movements},
            backlog={l.id: deque() for l in net.source_links},
            rng_demand=np.random.default_rng([seed, 0]),
            rng_cv=np.random.default_rng([seed, 1]),
            od_xi=[scenario.penetration.rate_for(od) for od in scenario.od_pairs.values()],
            last_actuation={m: -math.inf for m in net.movements},
            events=[] if record_events else None,
        )

    # --- bookkeeping -------------------------------------------------------
    def on_network(self) -> int:
        return sum(ls.count for ls in self.links.values())

    def in_backlog(self) -> int:
        return sum(len(q) for q in self.backlog.values())

    def queued(self) -> int:
        return sum(len(ls.queue) for ls in self.links.values())

    def check_conservation(self) -> None:
        if self.injected != self.on_network() + self.in_backlog() + self.exited:
            raise ConservationError(
                f"t={self.clock}: injected {self.injected} != on-network {self.on_network()}"
                f" + backlog {self.in_backlog()} + exited {self.exited}"
            )

    def log(self, vid: int, event: str) -> None:
        if self.events is not None:
            self.events.append((self.tick, vid, event))

    def vehicles(self) -> Iterator[Vehicle]:
        for ls in self.links.values():
            yield from ls.vehicles_front_first()


def travel_time_tau(vehicle: Vehicle, tau_bar: float, t: float) -> float:
    """Normalised link travel time ``(t - t_entry) / tau_bar``."""
    if t < vehicle.entry_time - EPS:
        raise ValueError(f"t={t} precedes link entry {vehicle.entry_time}")
    return (t - vehicle.entry_time) / tau_bar


def inject_demand(state: SimState, dt: float, rates: Iterable[float] | None = None) -> int:
    """Draw Poisson(rate * dt) arrivals per OD and append them to source backlogs.

    ``rates`` defaults to the scenario's profile rates at the current clock.
    Arrivals are appended OD by OD in declaration order, so two ODs sharing a
    source interleave in draw order.  Returns the number of new vehicles.
    """
    lam = np.asarray(state.scenario.od_rates(state.clock) if rates is None else list(rates), dtype=float)
    if not lam.any():
        # keep the demand stream aligned: one draw vector per tick regardless of rates
        state.rng_demand.poisson(lam * dt)
        return 0
    counts = state.rng_demand.poisson(lam * dt)
    n_new = 0
    for od, xi, k in zip(state.scenario.od_pairs.values(), state.od_xi, counts):
        for _ in range(int(k)):
            veh = Vehicle(state.next_vid, od.id, od.route, tag_vehicle(xi, state.rng_cv), state.clock)
            state.next_vid += 1
            state.backlog[od.source].append(veh)
            state.log(veh.vid, "inject")
            n_new += 1
    state.injected += n_new
    return n_new


def advance_vehicles(state: SimState, dt: float) -> None:
    """Move queued vehicles up to their slots and moving vehicles toward the queue back.

    A moving vehicle whose free-flow step would reach the back of the queue
    joins it this tick.  Detector crossings are recorded for actuated control.
    """
    t = state.clock
    last_act = state.last_actuation
    for ls in state.links.values():
        v = ls.speed
        step = v * dt
        det = ls.detector_x
        L = ls.length
        per_slot = ls.spacing / ls.lanes
        for rank, veh in enumerate(ls.queue):
            slot = L - rank * per_slot
            x_old = veh.x
            if x_old < slot:
                x_new = min(x_old + step, slot)
                veh.x = x_new
                if x_old < det <= x_new:
                    last_act[(ls.id, veh.route[veh.leg + 1])] = t
        if not ls.transit:
            continue
        n_q = len(ls.queue)
        qb = L - n_q * per_slot
        still: list[Vehicle] = []
        for veh in ls.transit:
            x_old = veh.x
            target = x_old + step
            if target >= qb - EPS:
                x_new = max(x_old, qb)
                veh.stop_time = t + max(qb - x_old, 0.0) / v
                veh.x = x_new
                veh.queued = True
                ls.queue.append(veh)
                mid = (ls.id, veh.route[veh.leg + 1])
                state.mqueues[mid].append(veh)
                n_q += 1
                qb = L - n_q * per_slot
                state.log(veh.vid, "join_queue")
            else:
                veh.x = x_new = target
                still.append(veh)
            if x_old < det <= x_new:
                last_act[(ls.id, veh.route[veh.leg + 1])] = t
        ls.transit = still


def discharge(state: SimState, decision: SignalDecision, dt: float) -> list[Transfer]:
    """Release vehicles across stoplines and from source backlogs.

    Receiving space is the free storage of each downstream link at the start
    of the discharge phase, shared first-come among feeders: real movements in
    network order, then source movements.  Entries into a link are at least
    one entry headway apart, so a vehicle that could only enter after the end
    of the tick waits at its stopline.  A blocked head-of-line vehicle blocks
    its whole movement (FIFO).
    """
    net = state.network
    t = state.clock
    t_end = t + dt
    links = state.links
    space = {lid: ls.capacity - ls.count for lid, ls in links.items()}
    transfers: list[Transfer] = []
    acc = state.acc
    green = decision.green

    def release(q: deque, mid: MovementId, avail: int, start_of: str) -> int:
        out = mid[1]
        ls_out = links.get(out)
        n = 0
        while n < avail and q:
            veh = q[0]
            cross = max(t, getattr(veh, start_of))
            if ls_out is not None:
                if space[out] <= 0:
                    state.log(veh.vid, "blocked")
                    break
                cross = max(cross, ls_out.next_entry)
                if cross > t_end + EPS:
                    state.log(veh.vid, "blocked")
                    break
                space[out] -= 1
                ls_out.next_entry = cross + ls_out.entry_headway
            q.popleft()
            transfers.append(Transfer(veh, mid, min(cross, t_end)))
            n += 1
        return n

    for mid, q in state.mqueues.items():
        if mid not in green:
            acc[mid] = 0.0
            continue
        a = acc[mid] + net.movements[mid].saturation_flow_c * decision.factor.get(mid, 1.0) * dt
        avail = math.floor(a + EPS)
        n = release(q, mid, avail, "stop_time")
        acc[mid] = max(a - n if n == avail else a - avail, 0.0)
    for src, q in state.backlog.items():
        mid = net.movements_from(src)[0]
        if not q:
            acc[mid] = 0.0
            continue
        a = acc[mid] + net.movements[mid].saturation_flow_c * dt
        avail = math.floor(a + EPS)
        n = release(q, mid, avail, "inject_time")
        acc[mid] = max(a - n if n == avail else a - avail, 0.0)
    return transfers


def apply_transfers(state: SimState, transfers: list[Transfer], dt: float) -> None:
    """Remove released vehicles from their links and place them downstream or retire them."""
    net = state.network
    t_end = state.clock + dt
    touched: set[str] = set()
    arrivals: dict[str, list[Transfer]] = {}
    for tr in transfers:
        veh = tr.vehicle
        src_link = tr.movement[0]
        if src_link in state.links:
            ls = state.links[src_link]
            touched.add(src_link)
            delay = (tr.cross_time - veh.entry_time) - ls.length / ls.speed
            veh.link_delays.append((src_link, max(delay, 0.0)))
            veh.free_flow_s += ls.length / ls.speed
        else:
            veh.link_delays.append((src_link, tr.cross_time - veh.inject_time))
        state.log(veh.vid, "discharge")
        veh.leg += 1
        veh.queued = False
        nxt = veh.route[veh.leg]
        if net.links[nxt].is_sink:
            state.exited += 1
            state.log(veh.vid, "exit")
            total_delay = (tr.cross_time - veh.inject_time) - veh.free_flow_s
            state.series.completed.append(
                CompletedVehicle(veh.vid, veh.od, veh.is_cv, veh.inject_time, tr.cross_time, max(total_delay, 0.0))
            )
        else:
            arrivals.setdefault(nxt, []).append(tr)
    for lid in touched:
        ls = state.links[lid]
        ls.queue = [v for v in ls.queue if v.route[v.leg] == lid]
    for lid, trs in arrivals.items():
        ls = state.links[lid]
        trs.sort(key=lambda tr: tr.cross_time)
        for tr in trs:
            veh = tr.vehicle
            veh.entry_time = tr.cross_time
            veh.x = max(ls.speed * (t_end - tr.cross_time), 0.0)
            ls.transit.append(veh)
            state.log(veh.vid, "enter_link")


def step(state: SimState, decision: SignalDecision, dt: float | None = None) -> SimState:
    """Advance the world by one tick: inject, advance, discharge, transfer, record."""
    dt = state.dt if dt is None else dt
    inject_demand(state, dt)
    advance_vehicles(state, dt)
    transfers = discharge(state, decision, dt)
    apply_transfers(state, transfers, dt)
    state.clock = (state.tick + 1) * dt
    state.tick += 1
    on_net = state.on_network()
    backlog = state.in_backlog()
    if state.injected != on_net + backlog + state.exited:
        raise ConservationError(
            f"t={state.clock}: injected {state.injected} != {on_net} + {backlog} + {state.exited}"
        )
    state.series.record_tick(state.clock, on_net, state.queued(), backlog)
    return state


@dataclass
class ActuatedParams:
    detector_m: float = 30.0
    gap_s: float = 3.0
    min_green_s: float = 5.0
    max_green_s: float = 60.0
    yellow_s: float = 3.0


class ActuatedController:
    """Gap-out / max-out fully actuated control, one phase ring per node.

    A phase is held while some green movement registered a detector crossing
    within ``gap_s``; after ``min_green_s`` it ends on gap-out or at
    ``max_green_s`` provided another phase has a call (a vehicle on one of its
    incoming links).  Phases are served in cyclic order, skipping those
    without calls; the node shows all-red during ``yellow_s``.
    """

    def __init__(self, network: Network, params: ActuatedParams | None = None) -> None:
        self.network = network
        self.params = params or ActuatedParams()
        self.current: dict[str, int] = {}
        self.green_start: dict[str, float] = {}
        self.yellow_until: dict[str, float] = {}
        self.pending: dict[str, int] = {}
        self.shown: dict[str, str | None] = {}
        for node in network.real_nodes:
            self.current[node.id] = 0
            self.green_start[node.id] = 0.0
            self.yellow_until[node.id] = -math.inf

    def _has_call(self, state: SimState, node_id: str, idx: int) -> bool:
        phase = self.network.nodes[node_id].phases[idx]
        return any(state.mqueues[m] or _moving_on(state, m) for m in phase.movements)

    def decide(self, state: SimState, node_id: str, t: float) -> str | None:
        """Phase shown at ``node_id`` during the tick starting at ``t`` (None = yellow)."""
        p = self.params
        node = self.network.nodes[node_id]
        if t < self.yellow_until[node_id] - EPS:
            return None
        if node_id in self.pending:
            self.current[node_id] = self.pending.pop(node_id)
            self.green_start[node_id] = t
        cur = self.current[node_id]
        elapsed = t - self.green_start[node_id]
        if elapsed + EPS >= p.min_green_s and len(node.phases) > 1:
            last = max(state.last_actuation[m] for m in node.phases[cur].movements)
            gapped = t - last >= p.gap_s + state.dt - EPS
            maxed = elapsed + EPS >= p.max_green_s
            if gapped or maxed:
                n = len(node.phases)
                for k in range(1, n):
                    cand = (cur + k) % n
                    if self._has_call(state, node_id, cand):
                        if p.yellow_s > 0:
                            self.yellow_until[node_id] = t + p.yellow_s
                            self.pending[node_id] = cand
                            return None
                        self.current[node_id] = cand
                        self.green_start[node_id] = t
                        return node.phases[cand].id
        return node.phases[self.current[node_id]].id

    def decision(self, state: SimState) -> SignalDecision:
        t = state.clock
        phases = {n.id: self.decide(state, n.id, t) for n in self.network.real_nodes}
        self.shown = phases
        return SignalDecision.from_phases(self.network, phases)


def actuated_decide(controller: ActuatedController, state: SimState, node: str, t: float) -> str | None:
    return controller.decide(state, node, t)


def _moving_on(state: SimState, movement: MovementId) -> bool:
    ls = state.links[movement[0]]
    return any(v.route[v.leg + 1] == movement[1] for v in ls.transit)
