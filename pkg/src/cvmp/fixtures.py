"""Synthetic scenario builders: a three-intersection arterial and small test networks.

The arterial runs west to east through nodes A, B and C.  Main links are long
(about 700 m, two lanes; the entry approach has a third lane so Poisson
arrival bursts stay below its jam-density inflow limit).  Each node also has a
short 90 m two-lane side approach whose traffic either crosses the arterial or
turns onto it, and a side exit that takes crossing traffic and vehicles
turning off the arterial.  Every node has two phases: ``P0`` serves the main
approach, ``P1`` the side approach.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Any, Sequence

from .scenario import Scenario, scenario_from_dict

NODES = ("A", "B", "C")
MAIN_SPEED = 13.89
SIDE_SPEED = 11.11


def trapezoid(total_veh_h: tuple[float, float], horizon_s: float = 10800.0, n_steps: int = 12) -> tuple[list[float], list[float]]:
    """Stepped ramp from ``lo`` up to ``hi`` and back over the horizon (rates in veh/s).

    The first third ramps up, the middle third holds the peak and the final
    third ramps down, each in equal-width constant steps.
    """
    lo, hi = total_veh_h
    per = n_steps // 3
    width = horizon_s / n_steps
    up = [lo + (hi - lo) * (k + 0.5) / per for k in range(per)]
    rates = up + [hi] * per + up[::-1]
    return [k * width for k in range(n_steps)], [r / 3600.0 for r in rates]


def corridor_document(
    *,
    name: str = "corridor",
    main_veh_h: tuple[float, float] = (1500.0, 2100.0),
    side_veh_h: float = 240.0,
    stationary: bool = False,
    main_lengths_m: Sequence[float] = (700.0, 700.0, 700.0),
    main_lanes: Sequence[int] = (3, 2, 2),
    side_length_m: float = 90.0,
    main_through_c: float = 0.9,
    main_turn_c: float = 0.25,
    side_through_c: float = 0.45,
    side_turn_c: float = 0.3,
    main_turn_off: float = 0.1,
    side_turn_on: float = 0.4,
    horizon_s: float = 10800.0,
    penetration: Any = 1.0,
    controller: str = "cvmp",
    seed: int = 0,
) -> dict[str, Any]:
    """Scenario document for the arterial fixture.

    ``main_veh_h`` is the (shoulder, peak) main-road demand; with
    ``stationary=True`` the mean of the stepped profile is applied throughout.
    ``side_veh_h`` is the constant demand of each side approach.
    """
    main_in = ["W0", "M1", "M2"]
    main_out = ["M1", "M2", "E0"]
    links: list[dict[str, Any]] = [
        {"id": "srcW", "kind": "source", "length_m": 0.0},
        {"id": "E0", "kind": "sink", "length_m": 0.0},
    ]
    for lid, L, lanes in zip(main_in, main_lengths_m, main_lanes):
        links.append({"id": lid, "kind": "real", "length_m": L, "lanes": lanes, "free_flow_speed_mps": MAIN_SPEED})
    for n in NODES:
        links += [
            {"id": f"src{n}", "kind": "source", "length_m": 0.0},
            {"id": f"S{n}", "kind": "real", "length_m": side_length_m, "lanes": 2, "free_flow_speed_mps": SIDE_SPEED},
            {"id": f"X{n}", "kind": "sink", "length_m": 0.0},
        ]
    movements: list[dict[str, Any]] = [{"in": "srcW", "out": "W0", "saturation_flow_veh_s": 10.0}]
    nodes = []
    for n, mi, mo in zip(NODES, main_in, main_out):
        movements += [
            {"in": f"src{n}", "out": f"S{n}", "saturation_flow_veh_s": 10.0},
            {"in": mi, "out": mo, "saturation_flow_veh_s": main_through_c},
            {"in": mi, "out": f"X{n}", "saturation_flow_veh_s": main_turn_c},
            {"in": f"S{n}", "out": f"X{n}", "saturation_flow_veh_s": side_through_c},
            {"in": f"S{n}", "out": mo, "saturation_flow_veh_s": side_turn_c},
        ]
        nodes.append({
            "id": n,
            "phases": [
                {"id": "P0", "movements": [f"{mi}->{mo}", f"{mi}->X{n}"]},
                {"id": "P1", "movements": [f"S{n}->X{n}", f"S{n}->{mo}"]},
            ],
        })

    bps, rates = trapezoid(main_veh_h, horizon_s)
    if stationary:
        mean = sum(rates) / len(rates)
        bps, rates = [0.0], [mean]
    profiles = [
        {"id": "main", "breakpoints_s": bps, "rates_veh_s": rates},
        {"id": "side", "breakpoints_s": [0.0], "rates_veh_s": [side_veh_h / 3600.0]},
    ]

    # main demand leaves at each node with probability main_turn_off
    od_pairs = []
    survive = 1.0
    full_main = ["srcW", "W0", "M1", "M2", "E0"]
    for k, n in enumerate(NODES):
        od_pairs.append({"id": f"main_off_{n}", "route": full_main[: k + 2] + [f"X{n}"],
                         "profile": "main", "scale": survive * main_turn_off, "group": "main"})
        survive *= 1.0 - main_turn_off
    od_pairs.append({"id": "main_thru", "route": full_main, "profile": "main", "scale": survive, "group": "main"})
    for k, n in enumerate(NODES):
        od_pairs.append({"id": f"side_{n}_cross", "route": [f"src{n}", f"S{n}", f"X{n}"],
                         "profile": "side", "scale": 1.0 - side_turn_on, "group": "side"})
        od_pairs.append({"id": f"side_{n}_on", "route": [f"src{n}", f"S{n}"] + full_main[k + 2:],
                         "profile": "side", "scale": side_turn_on, "group": "side"})

    return {
        "name": name,
        "links": links,
        "movements": movements,
        "nodes": nodes,
        "demand_profiles": profiles,
        "od_pairs": od_pairs,
        "penetration": penetration,
        "controller": {"type": controller, "T0_s": 10.0, "Ty_s": 3.0, "tie_break": "lowest_id"},
        "sim": {"dt_s": 1.0, "horizon_s": horizon_s, "seed": seed},
    }


def spillback_side_document(
    *,
    side_xi: float = 0.0,
    main_xi: float = 1.0,
    main_veh_h: float = 1080.0,
    side_veh_h: float = 360.0,
    horizon_s: float = 3600.0,
    seed: int = 0,
) -> dict[str, Any]:
    """One intersection: a 700 m main approach and a 90 m side approach, both exiting to sinks.

    With an unobserved side approach the side phase never gains pressure, so
    under CV-based control the side link fills and its source backs up.
    """
    return {
        "name": "spillback_side",
        "links": [
            {"id": "srcM", "kind": "source", "length_m": 0.0},
            {"id": "srcS", "kind": "source", "length_m": 0.0},
            {"id": "M", "kind": "real", "length_m": 700.0, "lanes": 2, "free_flow_speed_mps": MAIN_SPEED},
            {"id": "S", "kind": "real", "length_m": 90.0, "lanes": 2, "free_flow_speed_mps": SIDE_SPEED},
            {"id": "XM", "kind": "sink", "length_m": 0.0},
            {"id": "XS", "kind": "sink", "length_m": 0.0},
        ],
        "movements": [
            {"in": "srcM", "out": "M", "saturation_flow_veh_s": 10.0},
            {"in": "srcS", "out": "S", "saturation_flow_veh_s": 10.0},
            {"in": "M", "out": "XM", "saturation_flow_veh_s": 0.9},
            {"in": "S", "out": "XS", "saturation_flow_veh_s": 0.45},
        ],
        "nodes": [{"id": "N", "phases": [{"id": "P0", "movements": ["M->XM"]}, {"id": "P1", "movements": ["S->XS"]}]}],
        "demand_profiles": [
            {"id": "main", "breakpoints_s": [0.0], "rates_veh_s": [main_veh_h / 3600.0]},
            {"id": "side", "breakpoints_s": [0.0], "rates_veh_s": [side_veh_h / 3600.0]},
        ],
        "od_pairs": [
            {"id": "main", "route": ["srcM", "M", "XM"], "profile": "main", "group": "main"},
            {"id": "side", "route": ["srcS", "S", "XS"], "profile": "side", "group": "side"},
        ],
        "penetration": {"main": main_xi, "side": side_xi},
        "controller": {"type": "cvmp", "T0_s": 10.0, "Ty_s": 3.0},
        "sim": {"dt_s": 1.0, "horizon_s": horizon_s, "seed": seed},
    }


def two_phase_document(c: float = 1.0, lam: tuple[float, float] = (0.4, 0.4), horizon_s: float = 3600.0) -> dict[str, Any]:
    """One node, two single-movement phases, each movement exiting straight to a sink."""
    links = []
    movements = []
    for k in ("1", "2"):
        links += [
            {"id": f"s{k}", "kind": "source", "length_m": 0.0},
            {"id": f"a{k}", "kind": "real", "length_m": 300.0, "lanes": 2, "free_flow_speed_mps": 15.0},
            {"id": f"x{k}", "kind": "sink", "length_m": 0.0},
        ]
        movements += [
            {"in": f"s{k}", "out": f"a{k}", "saturation_flow_veh_s": 10.0},
            {"in": f"a{k}", "out": f"x{k}", "saturation_flow_veh_s": c},
        ]
    return {
        "name": "two_phase",
        "links": links,
        "movements": movements,
        "nodes": [{"id": "N", "phases": [{"id": "P1", "movements": ["a1->x1"]}, {"id": "P2", "movements": ["a2->x2"]}]}],
        "demand_profiles": [{"id": f"d{k}", "breakpoints_s": [0.0], "rates_veh_s": [lam[i]]} for i, k in enumerate("12")],
        "od_pairs": [{"id": f"od{k}", "route": [f"s{k}", f"a{k}", f"x{k}"], "profile": f"d{k}"} for k in "12"],
        "penetration": 1.0,
        "controller": {"type": "cvmp"},
        "sim": {"dt_s": 1.0, "horizon_s": horizon_s, "seed": 0},
    }


PACKAGED = ("corridor", "corridor_stationary", "spillback_side")


def packaged_document(name: str) -> dict[str, Any]:
    if name not in PACKAGED:
        raise KeyError(f"no packaged scenario {name!r}; available: {PACKAGED}")
    return json.loads(resources.files("cvmp.data").joinpath(f"{name}.json").read_text(encoding="utf-8"))


def packaged_scenario(name: str) -> Scenario:
    doc = packaged_document(name)
    doc.setdefault("name", name)
    return scenario_from_dict(doc)


def packaged_path(name: str):
    return resources.files("cvmp.data").joinpath(f"{name}.json")
