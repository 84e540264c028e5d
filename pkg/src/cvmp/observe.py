"""Connected-vehicle tagging and observation.

Every injected vehicle draws one uniform number from the tagging stream and is
a CV iff that number falls below its penetration rate.  One draw per vehicle
regardless of the rate keeps tagging coupled across penetration sweeps: raising
xi only ever converts NVs into CVs, it never reshuffles who is connected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence

import numpy as np

from .network import MovementId, Network, ODPair, ScenarioError

if TYPE_CHECKING:
    from .mesosim import SimState


@dataclass(frozen=True)
class PenetrationMap:
    """CV penetration rates keyed by OD id, OD group, entry movement or ``default``.

    Resolution order for a vehicle of OD ``od``: the OD id, then the first
    movement of its route that carries an override, then its group, then
    ``default`` (1.0 if absent).
    """

    rates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, xi in self.rates.items():
            if not (0.0 <= float(xi) <= 1.0):
                raise ScenarioError(f"penetration {key!r}={xi} outside [0, 1]")

    @classmethod
    def uniform(cls, xi: float) -> "PenetrationMap":
        return cls({"default": float(xi)})

    @classmethod
    def from_config(cls, raw: Any) -> "PenetrationMap":
        if raw is None:
            return cls({})
        if isinstance(raw, (int, float)):
            return cls.uniform(float(raw))
        return cls({str(k): float(v) for k, v in raw.items()})

    def validate_keys(self, ods: Mapping[str, ODPair], network: Network) -> None:
        groups = {od.group for od in ods.values() if od.group}
        for key in self.rates:
            if key == "default" or key in ods or key in groups:
                continue
            if "->" in key and tuple(p.strip() for p in key.split("->")) in network.movements:
                continue
            raise ScenarioError(f"penetration key {key!r} matches no OD, group or movement")

    def rate_for(self, od: ODPair) -> float:
        if od.id in self.rates:
            return float(self.rates[od.id])
        for a, b in od.movements:
            key = f"{a}->{b}"
            if key in self.rates:
                return float(self.rates[key])
        if od.group is not None and od.group in self.rates:
            return float(self.rates[od.group])
        return float(self.rates.get("default", 1.0))

    def unobserved_ods(self, ods: Iterable[ODPair]) -> list[str]:
        """OD ids with a zero rate; their vehicles are never observed, so stability guarantees lapse."""
        return [od.id for od in ods if self.rate_for(od) <= 0.0]

    def to_config(self) -> dict[str, float]:
        return dict(self.rates)


def tag_vehicle(xi: float, rng: np.random.Generator) -> bool:
    """Bernoulli(xi) connectivity flag; consumes exactly one draw."""
    return bool(rng.random() < xi)


@dataclass(frozen=True)
class VehicleView:
    """What a controller sees of one vehicle on the incoming link of a movement."""

    vid: int
    x: float
    tau: float
    delay: float
    is_cv: bool
    queued: bool
    next_link: str


@dataclass(frozen=True)
class MovementObservation:
    movement: MovementId
    vehicles: tuple[VehicleView, ...]  # all vehicles, front of link first
    observed: tuple[VehicleView, ...]  # CV subset, same order

    @property
    def z(self) -> int:
        return len(self.vehicles)

    @property
    def z_cv(self) -> int:
        return len(self.observed)

    @property
    def sign_match(self) -> bool:
        w_all = sum(v.tau for v in self.vehicles)
        w_cv = sum(v.tau for v in self.observed)
        return np.sign(w_all) == np.sign(w_cv)


@dataclass(frozen=True)
class Observation:
    """Per-movement vehicle sets at one decision instant.

    ``backlog``/``backlog_cv`` hold the source-link queue sizes keyed by source
    movement.  ``link_full`` flags real links at storage capacity.
    """

    t: float
    movements: Mapping[MovementId, MovementObservation]
    backlog: Mapping[MovementId, int]
    backlog_cv: Mapping[MovementId, int]
    link_full: Mapping[str, bool]

    def sign_mismatches(self) -> list[MovementId]:
        return [m for m, mo in self.movements.items() if not mo.sign_match]


def observe(state: "SimState", *, cv_only: bool = True) -> Observation:
    """Snapshot every real movement's vehicles, split into all and CV-observed.

    Turning intention comes from each vehicle's fixed route.  With
    ``cv_only=False`` every vehicle counts as observed (oracle view).
    """
    net = state.network
    t = state.clock
    buckets: dict[MovementId, list[VehicleView]] = {m: [] for m in net.movements if not net.is_source_movement(m)}
    link_full: dict[str, bool] = {}
    for lid, ls in state.links.items():
        tau_bar = ls.length / ls.speed
        # front of link first: queue in join order, then moving vehicles front to back
        for veh in ls.vehicles_front_first():
            nxt = veh.route[veh.leg + 1]
            tau = (t - veh.entry_time) / tau_bar
            delay = (t - veh.entry_time) - veh.x / ls.speed
            buckets[(lid, nxt)].append(
                VehicleView(veh.vid, veh.x, tau, max(delay, 0.0), veh.is_cv, veh.queued, nxt)
            )
        link_full[lid] = ls.count >= ls.capacity
    movements = {}
    for m, views in buckets.items():
        vt = tuple(views)
        obs = vt if not cv_only else tuple(v for v in vt if v.is_cv)
        movements[m] = MovementObservation(m, vt, obs)
    backlog = {}
    backlog_cv = {}
    for src, q in state.backlog.items():
        m = net.movements_from(src)[0]
        backlog[m] = len(q)
        backlog_cv[m] = sum(1 for v in q if v.is_cv)
    return Observation(t, movements, backlog, backlog_cv, link_full)


def resample_observation(obs: Observation, xi: float | Mapping[MovementId, float], rng: np.random.Generator) -> Observation:
    """Redraw every vehicle's CV flag on a frozen snapshot."""
    movements = {}
    for m, mo in obs.movements.items():
        p = xi if isinstance(xi, (int, float)) else xi[m]
        flags = rng.random(len(mo.vehicles)) < p
        views = tuple(VehicleView(v.vid, v.x, v.tau, v.delay, bool(f), v.queued, v.next_link)
                      for v, f in zip(mo.vehicles, flags))
        movements[m] = MovementObservation(m, views, tuple(v for v in views if v.is_cv))
    return Observation(obs.t, movements, obs.backlog, obs.backlog_cv, obs.link_full)


def expectation_check(taus: Sequence[float], xi: float, n_samples: int, rng: np.random.Generator) -> float | None:
    """Relative error of the resampled mean CV-weighted state against ``xi * w_all``.

    ``taus`` is a frozen set of per-vehicle weights (one movement, or a whole
    network flattened).  Returns ``None`` when ``w_all`` is zero.
    """
    if n_samples < 1000:
        raise ValueError("expectation_check needs n_samples >= 1000")
    tau = np.asarray(taus, dtype=float)
    w_all = float(tau.sum())
    if w_all == 0.0 or xi == 0.0:
        return None
    if xi >= 1.0:
        return 0.0
    flags = rng.random((n_samples, tau.size)) < xi
    w_cv = flags.astype(float) @ tau
    return abs(float(w_cv.mean()) - xi * w_all) / (xi * w_all)


def frozen_taus(obs: Observation) -> list[float]:
    return [v.tau for mo in obs.movements.values() for v in mo.vehicles]
