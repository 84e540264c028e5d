from __future__ import annotations

import copy

import pytest

from cvmp.fixtures import corridor_document, spillback_side_document, two_phase_document
from cvmp.scenario import scenario_from_dict

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def single_link_document(
    *,
    length: float = 400.0,
    speed: float = 10.0,
    lanes: int = 1,
    c: float = 0.5,
    rate: float = 0.0,
    horizon: float = 600.0,
) -> dict:
    """source -> one real link -> sink through a one-phase node."""
    return {
        "name": "single",
        "links": [
            {"id": "s", "kind": "source", "length_m": 0.0},
            {"id": "a", "kind": "real", "length_m": length, "lanes": lanes, "free_flow_speed_mps": speed},
            {"id": "x", "kind": "sink", "length_m": 0.0},
        ],
        "movements": [
            {"in": "s", "out": "a", "saturation_flow_veh_s": 10.0},
            {"in": "a", "out": "x", "saturation_flow_veh_s": c},
        ],
        "nodes": [{"id": "N", "phases": [{"id": "P", "movements": ["a->x"]}]}],
        "demand_profiles": [{"id": "d", "breakpoints_s": [0.0], "rates_veh_s": [rate]}],
        "od_pairs": [{"id": "od", "route": ["s", "a", "x"], "profile": "d"}],
        "penetration": 1.0,
        "sim": {"dt_s": 1.0, "horizon_s": horizon, "seed": 0},
    }


def chain_document(*, rate: float = 0.0, lengths=(300.0, 200.0), speed: float = 10.0, c: float = 1.0) -> dict:
    """source -> a -> b -> sink with one single-phase node per junction."""
    return {
        "name": "chain",
        "links": [
            {"id": "s", "kind": "source", "length_m": 0.0},
            {"id": "a", "kind": "real", "length_m": lengths[0], "lanes": 1, "free_flow_speed_mps": speed},
            {"id": "b", "kind": "real", "length_m": lengths[1], "lanes": 1, "free_flow_speed_mps": speed},
            {"id": "x", "kind": "sink", "length_m": 0.0},
        ],
        "movements": [
            {"in": "s", "out": "a", "saturation_flow_veh_s": 10.0},
            {"in": "a", "out": "b", "saturation_flow_veh_s": c},
            {"in": "b", "out": "x", "saturation_flow_veh_s": c},
        ],
        "nodes": [
            {"id": "N1", "phases": [{"id": "P", "movements": ["a->b"]}]},
            {"id": "N2", "phases": [{"id": "P", "movements": ["b->x"]}]},
        ],
        "demand_profiles": [{"id": "d", "breakpoints_s": [0.0], "rates_veh_s": [rate]}],
        "od_pairs": [{"id": "od", "route": ["s", "a", "b", "x"], "profile": "d"}],
        "penetration": 1.0,
        "sim": {"dt_s": 1.0, "horizon_s": 600.0, "seed": 0},
    }


def junction_document() -> dict:
    """Node X: approaches a, b into real links c, d; node Y splits c and d to sinks."""
    real = lambda lid, L: {"id": lid, "kind": "real", "length_m": L, "lanes": 1, "free_flow_speed_mps": 12.0}
    links = [
        {"id": "sa", "kind": "source"}, {"id": "sb", "kind": "source"},
        real("a", 400.0), real("b", 250.0), real("c", 300.0), real("d", 500.0),
        {"id": "x1", "kind": "sink"}, {"id": "x2", "kind": "sink"}, {"id": "x3", "kind": "sink"},
    ]
    mv = lambda i, o, c: {"in": i, "out": o, "saturation_flow_veh_s": c}
    movements = [
        mv("sa", "a", 10.0), mv("sb", "b", 10.0),
        mv("a", "c", 0.8), mv("a", "d", 0.3), mv("b", "c", 0.35), mv("b", "d", 0.7),
        mv("c", "x1", 0.6), mv("c", "x2", 0.4), mv("d", "x2", 0.9), mv("d", "x3", 0.5),
    ]
    nodes = [
        {"id": "X", "phases": [
            {"id": "p1", "movements": ["a->c", "b->d"]},
            {"id": "p2", "movements": ["a->d"]},
            {"id": "p3", "movements": ["b->c"]},
            {"id": "p4", "movements": ["a->c", "a->d"]},
        ]},
        {"id": "Y", "phases": [
            {"id": "q1", "movements": ["c->x1", "c->x2"]},
            {"id": "q2", "movements": ["d->x2", "d->x3"]},
        ]},
    ]
    od = lambda oid, route, s: {"id": oid, "route": route, "profile": "d", "scale": s}
    ods = [
        od("1", ["sa", "a", "c", "x1"], 0.3), od("2", ["sa", "a", "c", "x2"], 0.2), od("3", ["sa", "a", "d", "x3"], 0.1),
        od("4", ["sb", "b", "d", "x2"], 0.25), od("5", ["sb", "b", "c", "x1"], 0.15), od("6", ["sb", "b", "d", "x3"], 0.05),
    ]
    return {"name": "junction", "links": links, "movements": movements, "nodes": nodes,
            "demand_profiles": [{"id": "d", "breakpoints_s": [0.0], "rates_veh_s": [0.5]}],
            "od_pairs": ods, "penetration": 0.6, "sim": {"dt_s": 1.0, "horizon_s": 1200.0, "seed": 0}}


@pytest.fixture(scope="session")
def junction():
    return scenario_from_dict(junction_document())


@pytest.fixture
def corridor_doc():
    return corridor_document()


@pytest.fixture(scope="session")
def corridor():
    return scenario_from_dict(corridor_document())


@pytest.fixture(scope="session")
def corridor_short():
    return scenario_from_dict(corridor_document(horizon_s=900.0))


@pytest.fixture(scope="session")
def two_phase():
    return scenario_from_dict(two_phase_document())


@pytest.fixture(scope="session")
def spillback():
    return scenario_from_dict(spillback_side_document())


def clone(doc: dict) -> dict:
    return copy.deepcopy(doc)
