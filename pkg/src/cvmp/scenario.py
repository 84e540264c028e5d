"""Scenario documents: network plus demand, penetration, controller and sim settings."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .network import (
    DemandProfile,
    Network,
    ODPair,
    ScenarioError,
    build_network,
    movement_flows,
    parse_od_pairs,
    parse_profiles,
)
from .observe import PenetrationMap


@dataclass(frozen=True)
class SimParams:
    dt_s: float = 1.0
    horizon_s: float = 10800.0
    T0_s: float = 10.0
    Ty_s: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dt_s <= 0:
            raise ScenarioError("sim.dt_s must be > 0")
        if not self.T0_s > self.Ty_s >= 0:
            raise ScenarioError("need T0 > Ty >= 0")
        ratio = self.T0_s / self.dt_s
        if abs(ratio - round(ratio)) > 1e-9:
            raise ScenarioError("sim.dt_s must divide T0_s")

    @property
    def n_ticks(self) -> int:
        return int(round(self.horizon_s / self.dt_s))

    @property
    def ticks_per_decision(self) -> int:
        return int(round(self.T0_s / self.dt_s))


@dataclass(frozen=True)
class Scenario:
    name: str
    network: Network
    od_pairs: dict[str, ODPair]
    profiles: dict[str, DemandProfile]
    penetration: PenetrationMap
    controller: dict[str, Any]
    sim: SimParams
    document: dict[str, Any]

    def with_overrides(
        self,
        *,
        controller: str | Mapping[str, Any] | None = None,
        seed: int | None = None,
        penetration: float | Mapping[str, float] | None = None,
        demand_scale: float | None = None,
        horizon_s: float | None = None,
    ) -> "Scenario":
        doc = copy.deepcopy(self.document)
        if controller is not None:
            if isinstance(controller, str):
                doc.setdefault("controller", {})["type"] = controller
            else:
                doc["controller"] = {**doc.get("controller", {}), **dict(controller)}
        if seed is not None:
            doc.setdefault("sim", {})["seed"] = int(seed)
        if penetration is not None:
            doc["penetration"] = penetration if isinstance(penetration, (int, float)) else dict(penetration)
        if demand_scale is not None:
            # a zero scale would leave route-derived turning ratios undefined
            for m in doc.get("movements", []) if demand_scale == 0 else ():
                m.setdefault("turning_ratio", self.network.movements[(m["in"], m["out"])].turning_ratio_r)
            for od in doc.get("od_pairs", []):
                od["scale"] = float(od.get("scale", 1.0)) * float(demand_scale)
        if horizon_s is not None:
            doc.setdefault("sim", {})["horizon_s"] = float(horizon_s)
        return scenario_from_dict(doc)

    def od_rates(self, t: float) -> list[float]:
        return [od.scale * self.profiles[od.profile].rate(t) for od in self.od_pairs.values()]

    def source_demand(self, stat: str = "mean") -> dict[tuple[str, str], float]:
        """Exogenous demand per source movement (veh/s)."""
        flows = movement_flows(self.network.movements, self.od_pairs, self.profiles, self.sim.horizon_s, stat=stat)
        return {m: f for m, f in flows.items() if self.network.is_source_movement(m)}

    def routed_demand(self, stat: str = "mean") -> dict[tuple[str, str], float]:
        return movement_flows(self.network.movements, self.od_pairs, self.profiles, self.sim.horizon_s, stat=stat)


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    doc = copy.deepcopy(dict(doc))
    network = build_network(doc)
    profiles = parse_profiles(doc.get("demand_profiles", []))
    ods = parse_od_pairs(doc.get("od_pairs", []))
    penetration = PenetrationMap.from_config(doc.get("penetration"))
    penetration.validate_keys(ods, network)
    raw_sim = dict(doc.get("sim", {}))
    controller = dict(doc.get("controller", {"type": "cvmp"}))
    for key in ("T0_s", "Ty_s"):
        if key in controller:
            raw_sim[key] = controller[key]
    known = {"dt_s", "horizon_s", "T0_s", "Ty_s", "seed"}
    unknown = set(raw_sim) - known
    if unknown:
        raise ScenarioError(f"unknown sim keys {sorted(unknown)}")
    sim = SimParams(**{k: (int(v) if k == "seed" else float(v)) for k, v in raw_sim.items()})
    return Scenario(str(doc.get("name", network.name)), network, ods, profiles, penetration, controller, sim, doc)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    doc.setdefault("name", path.stem)
    return scenario_from_dict(doc)


def save_scenario(doc: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")
