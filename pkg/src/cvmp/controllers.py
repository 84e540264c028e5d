"""Max-pressure controllers with pluggable per-vehicle weights, plus the closed loop."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .mesosim import ActuatedController, ActuatedParams, SignalDecision, SimState, step
from .metrics import MetricsSeries
from .network import MovementId, Network, ScenarioError
from .observe import Observation, VehicleView, observe
from .scenario import Scenario


class WeightKind(str, enum.Enum):
    Q = "Q"
    PW = "PW"
    CV_TT = "CV_TT"
    HOL_DELAY = "HOL_DELAY"
    TOTAL_DELAY = "TOTAL_DELAY"


@dataclass(frozen=True)
class WeightFunction:
    """Per-vehicle weight ``y_j``.

    ``q_sqrt_length`` selects ``1/sqrt(L)`` for the queue weight (default) over
    plain ``1``.  Every kind counts a vehicle only once it has left the link
    entrance (``x > 0``).  Delay-based kinds carry no stability guarantee.
    """

    kind: WeightKind = WeightKind.CV_TT
    q_sqrt_length: bool = True

    def vehicle(self, v: VehicleView, length: float, outgoing: bool = False) -> float:
        if v.x <= 0.0:
            return 0.0
        k = self.kind
        if k is WeightKind.Q:
            return 1.0 / math.sqrt(length) if self.q_sqrt_length else 1.0
        if k is WeightKind.PW:
            frac = min(v.x / length, 1.0)
            return 1.0 - frac if outgoing else frac
        if k is WeightKind.CV_TT:
            return v.tau
        return v.delay

    def traffic_state(self, views: Sequence[VehicleView], length: float, outgoing: bool = False) -> float:
        if self.kind is WeightKind.HOL_DELAY:
            for v in views:
                if v.x > 0.0:
                    return v.delay
            return 0.0
        return math.fsum(self.vehicle(v, length, outgoing) for v in views)

    def scaled(self, k: float) -> "ScaledWeight":
        return ScaledWeight(self, k)


@dataclass(frozen=True)
class ScaledWeight:
    """``k * y`` for a base weight; used to check argmax scale invariance."""

    base: WeightFunction
    k: float

    @property
    def kind(self) -> WeightKind:
        return self.base.kind

    def vehicle(self, v: VehicleView, length: float, outgoing: bool = False) -> float:
        return self.k * self.base.vehicle(v, length, outgoing)

    def traffic_state(self, views: Sequence[VehicleView], length: float, outgoing: bool = False) -> float:
        if self.base.kind is WeightKind.HOL_DELAY:
            return self.k * self.base.traffic_state(views, length, outgoing)
        return math.fsum(self.vehicle(v, length, outgoing) for v in views)


@dataclass(frozen=True)
class MovementTrafficState:
    w_cv: float
    w_all: float


def movement_state(
    network: Network,
    obs: Observation,
    movement: MovementId,
    weight: WeightFunction,
    *,
    outgoing: bool = False,
) -> MovementTrafficState:
    """Weighted traffic state of one movement from a decision-instant observation.

    Source movements report their backlog count (CV-observed count for
    ``w_cv``).  ``outgoing`` selects the downstream-role weight (only PW differs).
    """
    if network.is_source_movement(movement):
        return MovementTrafficState(float(obs.backlog_cv[movement]), float(obs.backlog[movement]))
    mo = obs.movements[movement]
    L = network.links[movement[0]].length_m
    return MovementTrafficState(
        weight.traffic_state(mo.observed, L, outgoing),
        weight.traffic_state(mo.vehicles, L, outgoing),
    )


def pressure(
    network: Network,
    obs: Observation,
    movement: MovementId,
    weight: WeightFunction,
    *,
    use_all: bool = False,
) -> float:
    """``c * (w_in - sum_k r_(o,k) w_(o,k))``; exits to sinks have no downstream term."""
    pick = (lambda s: s.w_all) if use_all else (lambda s: s.w_cv)
    w_in = pick(movement_state(network, obs, movement, weight))
    down = [
        network.movements[d].turning_ratio_r * pick(movement_state(network, obs, d, weight, outgoing=True))
        for d in network.downstream(movement)
    ]
    return network.movements[movement].saturation_flow_c * (w_in - math.fsum(down))


TIE_BREAKS = ("lowest_id", "keep_current")


@dataclass(frozen=True)
class ControllerSpec:
    type: str
    weight: WeightFunction | None
    T0_s: float = 10.0
    Ty_s: float = 3.0
    tie_break: str = "lowest_id"
    cv_only: bool = True
    actuated: ActuatedParams | None = None

    def __post_init__(self) -> None:
        if not self.T0_s > self.Ty_s >= 0:
            raise ScenarioError("controller needs T0 > Ty >= 0")
        if self.tie_break not in TIE_BREAKS:
            raise ScenarioError(f"unknown tie_break {self.tie_break!r}; expected one of {TIE_BREAKS}")

    @property
    def switch_factor(self) -> float:
        return (self.T0_s - self.Ty_s) / self.T0_s


_TYPE_WEIGHTS = {
    "qmp": WeightKind.Q,
    "pwmp": WeightKind.PW,
    "cvmp": WeightKind.CV_TT,
    "holmp": WeightKind.HOL_DELAY,
    "tdmp": WeightKind.TOTAL_DELAY,
}
CONTROLLER_TYPES = tuple(_TYPE_WEIGHTS) + ("actuated",)


def controller_from_config(raw: Mapping[str, Any] | str, *, T0_s: float = 10.0, Ty_s: float = 3.0) -> ControllerSpec:
    cfg = {"type": raw} if isinstance(raw, str) else dict(raw)
    ctype = str(cfg.get("type", "cvmp")).lower()
    if ctype not in CONTROLLER_TYPES:
        raise ScenarioError(f"unknown controller type {ctype!r}; expected one of {CONTROLLER_TYPES}")
    T0 = float(cfg.get("T0_s", T0_s))
    Ty = float(cfg.get("Ty_s", Ty_s))
    tie = str(cfg.get("tie_break", "lowest_id"))
    if ctype == "actuated":
        keys = ("detector_m", "gap_s", "min_green_s", "max_green_s")
        params = ActuatedParams(**{k: float(cfg[k]) for k in keys if k in cfg}, yellow_s=Ty)
        return ControllerSpec(ctype, None, T0, Ty, tie, actuated=params)
    q_mode = str(cfg.get("q_weight", "inv_sqrt_length"))
    if q_mode not in ("inv_sqrt_length", "unit"):
        raise ScenarioError(f"unknown q_weight {q_mode!r}")
    weight = WeightFunction(_TYPE_WEIGHTS[ctype], q_sqrt_length=q_mode == "inv_sqrt_length")
    return ControllerSpec(ctype, weight, T0, Ty, tie, cv_only=bool(cfg.get("cv_only", True)))


def phase_pressures(
    network: Network, node: str, weight: WeightFunction, obs: Observation, *, use_all: bool = False
) -> dict[str, float]:
    n = network.nodes[node]
    per_move = {m: pressure(network, obs, m, weight, use_all=use_all) for m in n.movements}
    return {p.id: math.fsum(per_move[m] for m in p.movements) for p in n.phases}


def decide(
    network: Network,
    node: str,
    spec: ControllerSpec,
    obs: Observation,
    *,
    current: str | None = None,
    use_all: bool = False,
) -> str:
    """Phase of ``node`` with the largest summed pressure.

    Ties go to the lexicographically lowest phase id, or to ``current`` when
    ``tie_break='keep_current'`` and it is among the maximisers.
    """
    if spec.weight is None:
        raise ScenarioError("decide() needs a max-pressure controller")
    scores = phase_pressures(network, node, spec.weight, obs, use_all=use_all)
    best = max(scores.values())
    tied = sorted(pid for pid, s in scores.items() if s == best)
    if spec.tie_break == "keep_current" and current in tied:
        return current
    return tied[0]


@dataclass
class RunResult:
    scenario: Scenario
    spec: ControllerSpec
    seed: int
    series: MetricsSeries
    state: SimState
    events: list | None = None
    decisions: list[dict[str, str | None]] = field(default_factory=list)


def lyapunov_value(network: Network, obs: Observation, weight: WeightFunction) -> float:
    """Discrete Lyapunov value: ``z * sum(y)`` per real movement plus ``backlog**2 / 2`` per source."""
    total = []
    for m, mo in obs.movements.items():
        if mo.vehicles:
            L = network.links[m[0]].length_m
            total.append(mo.z * weight.traffic_state(mo.vehicles, L))
    total.extend(0.5 * b * b for b in obs.backlog.values())
    return math.fsum(total)


TickHook = Callable[[SimState], None]


def run_policy(
    scenario: Scenario,
    spec: ControllerSpec | None = None,
    *,
    seed: int | None = None,
    horizon_s: float | None = None,
    record_events: bool = False,
    tick_hook: TickHook | None = None,
    monitor: bool = True,
) -> RunResult:
    """Closed-loop run: decide every T0 at each real node, then step the simulator.

    A node that changes phase at a decision instant has its saturation flows
    multiplied by ``(T0 - Ty) / T0`` for that decision step.  The initial
    choice at ``t = 0`` is not a switch.  The actuated controller decides every
    tick and models yellow explicitly instead.
    """
    from .stability import necessary_condition_monitor

    spec = spec or controller_from_config(scenario.controller, T0_s=scenario.sim.T0_s, Ty_s=scenario.sim.Ty_s)
    seed = scenario.sim.seed if seed is None else int(seed)
    net = scenario.network
    dt = scenario.sim.dt_s
    horizon = scenario.sim.horizon_s if horizon_s is None else horizon_s
    n_ticks = int(round(horizon / dt))
    per_dec = int(round(spec.T0_s / dt))
    if abs(spec.T0_s / dt - per_dec) > 1e-9:
        raise ScenarioError("sim.dt_s must divide controller T0_s")
    state = SimState.initial(
        scenario, seed=seed, record_events=record_events,
        detector_m=spec.actuated.detector_m if spec.actuated else 30.0,
    )
    series = state.series
    result = RunResult(scenario, spec, seed, series, state)
    lyap_weight = spec.weight or WeightFunction(WeightKind.CV_TT)
    actuated = ActuatedController(net, spec.actuated) if spec.type == "actuated" else None
    current: dict[str, str | None] = {n.id: None for n in net.real_nodes}
    decision = SignalDecision(frozenset())

    for tick in range(n_ticks):
        if actuated is not None:
            decision = actuated.decision(state)
            for node in net.real_nodes:
                shown = actuated.shown[node.id]
                if shown != current[node.id]:
                    series.signal_trace.append((state.clock, node.id, shown))
                    current[node.id] = shown
            if tick % per_dec == 0:
                _record_decision_stats(state, series, lyap_weight, monitor, necessary_condition_monitor)
        elif tick % per_dec == 0:
            obs = _record_decision_stats(state, series, lyap_weight, monitor, necessary_condition_monitor,
                                         cv_only=spec.cv_only)
            chosen: dict[str, str] = {}
            factors: dict[str, float] = {}
            for node in net.real_nodes:
                pid = decide(net, node.id, spec, obs, current=current[node.id])
                if current[node.id] is not None and pid != current[node.id]:
                    factors[node.id] = spec.switch_factor
                chosen[node.id] = pid
            for nid, pid in chosen.items():
                if pid != current[nid]:
                    series.signal_trace.append((state.clock, nid, pid))
            current.update(chosen)
            decision = SignalDecision.from_phases(net, chosen, factors)
            result.decisions.append(dict(chosen))
        step(state, decision, dt)
        if tick_hook is not None:
            tick_hook(state)

    series.incomplete = state.on_network() + state.in_backlog()
    result.events = state.events
    return result


def _record_decision_stats(state, series, weight, monitor, monitor_fn, *, cv_only: bool = True) -> Observation:
    obs = observe(state, cv_only=cv_only)
    net = state.network
    series.decision_t.append(state.clock)
    series.lyapunov.append(lyapunov_value(net, obs, weight))
    series.sum_z.append(sum(mo.z for mo in obs.movements.values()) + sum(obs.backlog.values()))
    series.z_cv.append(sum(mo.z_cv for mo in obs.movements.values()))
    series.sign_mismatches.append(len(obs.sign_mismatches()))
    if monitor:
        series.nc_events.extend(monitor_fn(net, obs))
    return obs
