"""Stability diagnostics: admissible demand region, Lyapunov drift, weight audits, NC monitor."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .controllers import ControllerSpec, WeightFunction, WeightKind, controller_from_config, run_policy
from .metrics import MetricsSeries
from .network import MovementId, Network
from .observe import Observation
from .scenario import Scenario


class AdmissibilityError(ValueError):
    """The admissibility LP is degenerate or could not be solved."""


@dataclass(frozen=True)
class AdmissibilityReport:
    feasible: bool
    epsilon: float
    witness: dict[str, dict[str, float]]
    demand: dict[MovementId, float]
    binding: tuple[MovementId, ...] = ()

    def to_json(self) -> dict:
        return {
            "feasible": self.feasible,
            "epsilon": self.epsilon,
            "witness": self.witness,
            "binding": [f"{a}->{b}" for a, b in self.binding],
        }


def propagate_demand(network: Network, source_lambda: Mapping[MovementId, float]) -> dict[MovementId, float]:
    """Push per-source-movement demand through the turning ratios to every movement."""
    mids = list(network.movements)
    idx = {m: k for k, m in enumerate(mids)}
    n = len(mids)
    A = np.eye(n)
    b = np.zeros(n)
    for m in mids:
        if network.is_source_movement(m):
            b[idx[m]] = float(source_lambda.get(m, 0.0))
            continue
        r = network.movements[m].turning_ratio_r
        for up in network.movements_into(m[0]):
            A[idx[m], idx[up]] -= r
    for m in source_lambda:
        if m not in idx or not network.is_source_movement(m):
            raise AdmissibilityError(f"{m} is not a source movement")
    try:
        f = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise AdmissibilityError("turning ratios form a closed loop; routed demand is unbounded") from exc
    return {m: float(f[idx[m]]) for m in mids}


def check_admissible(
    network: Network,
    source_lambda: Mapping[MovementId, float] | None = None,
    *,
    routed: Mapping[MovementId, float] | None = None,
) -> AdmissibilityReport:
    """Largest uniform margin ``eps`` with ``lambda_m <= c_m * sbar_m - eps`` for every movement.

    ``sbar`` ranges over per-node convex combinations of the phases; source
    movements are always served.  Pass either per-source demand (propagated by
    turning ratios) or an already routed per-movement demand.
    """
    if routed is None:
        routed = propagate_demand(network, source_lambda or {})
    demand = {m: float(routed.get(m, 0.0)) for m in network.movements}
    cols: list[tuple[str, str]] = []
    for node in network.real_nodes:
        cols.extend((node.id, p.id) for p in node.phases)
    col = {k: i for i, k in enumerate(cols)}
    n_var = len(cols) + 1
    A_ub, b_ub, rows = [], [], []
    for m, mov in network.movements.items():
        row = np.zeros(n_var)
        row[-1] = 1.0
        if network.is_source_movement(m):
            rhs = mov.saturation_flow_c - demand[m]
        else:
            node = network.nodes[network.node_of(m)]
            for p in node.phases:
                if m in p.movements:
                    row[col[(node.id, p.id)]] = -mov.saturation_flow_c
            rhs = -demand[m]
        A_ub.append(row)
        b_ub.append(rhs)
        rows.append(m)
    if not rows:
        raise AdmissibilityError("network has no movements")
    A_eq, b_eq = [], []
    for node in network.real_nodes:
        row = np.zeros(n_var)
        for p in node.phases:
            row[col[(node.id, p.id)]] = 1.0
        A_eq.append(row)
        b_eq.append(1.0)
    cost = np.zeros(n_var)
    cost[-1] = -1.0
    bounds = [(0.0, 1.0)] * len(cols) + [(None, None)]
    res = linprog(
        cost, A_ub=np.array(A_ub), b_ub=np.array(b_ub),
        A_eq=np.array(A_eq) if A_eq else None, b_eq=np.array(b_eq) if b_eq else None,
        bounds=bounds, method="highs",
    )
    if res.status != 0:
        raise AdmissibilityError(f"admissibility LP failed: {res.message}")
    eps = float(res.x[-1])
    witness: dict[str, dict[str, float]] = {}
    for node in network.real_nodes:
        frac = np.clip([res.x[col[(node.id, p.id)]] for p in node.phases], 0.0, None)
        frac = frac / frac.sum()
        witness[node.id] = {p.id: float(f) for p, f in zip(node.phases, frac)}
    slack = np.array(b_ub) - np.array(A_ub) @ res.x
    binding = tuple(m for m, s in zip(rows, slack) if abs(s) < 1e-9)
    return AdmissibilityReport(eps >= 0.0, eps, witness, demand, binding)


def scenario_admissibility(scenario: Scenario, stat: str = "mean") -> AdmissibilityReport:
    """Admissibility of a scenario's route-induced demand (mean or peak over the horizon)."""
    return check_admissible(scenario.network, routed=scenario.routed_demand(stat))


@dataclass(frozen=True)
class LyapunovTrace:
    t: np.ndarray
    V: np.ndarray
    sum_z: np.ndarray
    dVdt: np.ndarray

    def segment(self, t_start: float, t_end: float = math.inf) -> "LyapunovTrace":
        keep = (self.t >= t_start) & (self.t <= t_end)
        return LyapunovTrace(self.t[keep], self.V[keep], self.sum_z[keep], self.dVdt[keep])

    def to_csv(self) -> str:
        lines = ["t,V,sum_z,dVdt"]
        lines.extend(f"{a:g},{b:.6f},{int(c)},{d:.6f}" for a, b, c, d in zip(self.t, self.V, self.sum_z, self.dVdt))
        return "\n".join(lines) + "\n"


def lyapunov_trace(series: MetricsSeries) -> LyapunovTrace:
    """Lyapunov samples recorded at decision instants, with central-difference drift."""
    t = np.asarray(series.decision_t, dtype=float)
    V = np.asarray(series.lyapunov, dtype=float)
    return trace_from_arrays(t, V, np.asarray(series.sum_z, dtype=float))


def trace_from_arrays(t: Sequence[float], V: Sequence[float], sum_z: Sequence[float]) -> LyapunovTrace:
    t = np.asarray(t, dtype=float)
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise ValueError("Lyapunov values must be non-negative")
    dV = np.gradient(V, t) if len(t) >= 2 else np.zeros_like(V)
    return LyapunovTrace(t, V, np.asarray(sum_z, dtype=float), dV)


def drift_negativity_test(trace: LyapunovTrace, z_threshold: float | None = None) -> float:
    """Fraction of high-load steps (``sum_z > z_threshold``) with strictly negative drift.

    The threshold defaults to the 75th percentile of ``sum_z`` over the trace.
    This is an empirical indicator, not a proof of stability.
    """
    if len(trace.t) < 100:
        raise ValueError(f"drift test needs at least 100 decision steps, got {len(trace.t)}")
    thr = float(np.percentile(trace.sum_z, 75)) if z_threshold is None else float(z_threshold)
    high = trace.sum_z > thr
    if not high.any():
        return 0.0
    return float(np.mean(trace.dVdt[high] < 0))


@dataclass(frozen=True)
class NecessaryConditionEvent:
    t: float
    node: str
    phase: str
    movements: tuple[MovementId, ...]

    def to_json(self) -> dict:
        return {"t": self.t, "node": self.node, "phase": self.phase,
                "movements": [f"{a}->{b}" for a, b in self.movements]}


def necessary_condition_monitor(network: Network, obs: Observation) -> list[NecessaryConditionEvent]:
    """Phases whose every movement is unobserved (no CVs) while its incoming link is full."""
    events = []
    for node in network.real_nodes:
        for phase in node.phases:
            if all(obs.movements[m].z_cv == 0 and obs.link_full[m[0]] for m in phase.movements):
                events.append(NecessaryConditionEvent(obs.t, node.id, phase.id, tuple(phase.movements)))
    return events


@dataclass
class WeightAudit:
    """Per-kind outcome of auditing weight conditions along one trajectory."""

    kind: WeightKind
    checks: int = 0
    negative: int = 0
    nonfinite: int = 0
    nonzero_at_entry: int = 0
    step_violations: int = 0
    max_step: float = 0.0
    step_bound: float = 0.0
    y_max: float = 0.0

    @property
    def violations(self) -> int:
        return self.negative + self.nonfinite + self.nonzero_at_entry + self.step_violations

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "checks": self.checks, "violations": self.violations,
                "negative": self.negative, "nonfinite": self.nonfinite,
                "nonzero_at_entry": self.nonzero_at_entry, "step_violations": self.step_violations,
                "max_step": self.max_step, "step_bound": self.step_bound, "y_max": self.y_max}


class _Auditor:
    """Streams per-vehicle weights each tick and accumulates per-kind step changes."""

    def __init__(self, kinds: Sequence[WeightKind], q_sqrt_length: bool) -> None:
        self.kinds = list(kinds)
        self.q_sqrt = q_sqrt_length
        self.prev: dict[int, tuple[str, tuple[float, ...]]] = {}
        self.reports = {k: WeightAudit(k) for k in self.kinds}
        self.steps: dict[WeightKind, list[np.ndarray]] = {k: [] for k in self.kinds}
        self.pw_excess: list[float] = []
        self.dt = 1.0

    def _y(self, kind: WeightKind, x: float, tau: float, L: float) -> float:
        if x <= 0.0:
            return 0.0
        if kind is WeightKind.Q:
            return 1.0 / math.sqrt(L) if self.q_sqrt else 1.0
        if kind is WeightKind.PW:
            return min(x / L, 1.0)
        if kind is WeightKind.CV_TT:
            return tau
        raise ValueError(f"weight audit does not cover {kind}")

    def __call__(self, state) -> None:
        t = state.clock
        self.dt = state.dt
        seen: dict[int, tuple[str, tuple[float, ...]]] = {}
        deltas = {k: [] for k in self.kinds}
        for lid, ls in state.links.items():
            tau_bar = ls.length / ls.speed
            pw_cap = ls.speed * state.dt / ls.length
            for veh in ls.vehicles_front_first():
                tau = (t - veh.entry_time) / tau_bar
                ys = tuple(self._y(k, veh.x, tau, ls.length) for k in self.kinds)
                for k, y in zip(self.kinds, ys):
                    rep = self.reports[k]
                    rep.checks += 1
                    if not math.isfinite(y):
                        rep.nonfinite += 1
                    elif y < 0:
                        rep.negative += 1
                    if veh.x <= 0.0 and y != 0.0:
                        rep.nonzero_at_entry += 1
                    rep.y_max = max(rep.y_max, y)
                prev = self.prev.get(veh.vid)
                if prev is not None and prev[0] == lid:
                    for k, y, y0 in zip(self.kinds, ys, prev[1]):
                        d = abs(y - y0)
                        deltas[k].append(d)
                        if k is WeightKind.PW and d > pw_cap + 1e-12:
                            self.reports[k].step_violations += 1
                        if k is WeightKind.Q and d != 0.0:
                            self.reports[k].step_violations += 1
                elif prev is not None:
                    # left the previous link: its contribution there drops to zero
                    for k, y0 in zip(self.kinds, prev[1]):
                        deltas[k].append(abs(y0))
                seen[veh.vid] = (lid, ys)
        for vid, (lid, ys) in self.prev.items():
            if vid not in seen:
                for k, y0 in zip(self.kinds, ys):
                    deltas[k].append(abs(y0))
        self.prev = seen
        for k, d in deltas.items():
            if d:
                self.steps[k].append(np.asarray(d))

    def finish(self) -> dict[WeightKind, WeightAudit]:
        for k in self.kinds:
            rep = self.reports[k]
            d = np.concatenate(self.steps[k]) if self.steps[k] else np.zeros(0)
            rep.max_step = float(d.max()) if d.size else 0.0
            if k is WeightKind.CV_TT:
                rep.step_bound = rep.y_max + self.dt
                rep.step_violations += int(np.sum(d > rep.step_bound + 1e-12))
        return self.reports


def audit_weights(
    scenario: Scenario,
    spec: ControllerSpec | None = None,
    *,
    kinds: Sequence[WeightKind] = (WeightKind.CV_TT, WeightKind.Q, WeightKind.PW),
    seed: int | None = None,
    horizon_s: float | None = None,
) -> dict[WeightKind, WeightAudit]:
    """Run one trajectory and check every listed weight kind on every vehicle and tick.

    Checked: finite and non-negative values, zero weight at the link entrance,
    and bounded per-tick change.  Within a link, Q must not change and PW may
    change by at most ``v * dt / L``.  For travel-time weights every change,
    including the drop when a vehicle leaves a movement, must stay within
    ``tau_max_observed + dt``.
    """
    spec = spec or controller_from_config(scenario.controller, T0_s=scenario.sim.T0_s, Ty_s=scenario.sim.Ty_s)
    q_sqrt = spec.weight.q_sqrt_length if isinstance(spec.weight, WeightFunction) else True
    auditor = _Auditor(kinds, q_sqrt)
    run_policy(scenario, spec, seed=seed, horizon_s=horizon_s, tick_hook=auditor, monitor=False)
    return auditor.finish()
