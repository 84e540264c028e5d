"""Time series and per-vehicle ledger recorded during a run."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class CompletedVehicle:
    vid: int
    od: str
    is_cv: bool
    inject_time: float
    exit_time: float
    delay_s: float


@dataclass
class MetricsSeries:
    """Per-tick network counts plus the completed-vehicle ledger.

    ``lyapunov`` and ``sum_z`` are sampled at decision instants only; the other
    columns have one entry per simulation tick, stamped with the tick's end time.
    """

    t: list[float] = field(default_factory=list)
    total_vehicles: list[int] = field(default_factory=list)
    total_queued: list[int] = field(default_factory=list)
    total_spillover: list[int] = field(default_factory=list)
    completed: list[CompletedVehicle] = field(default_factory=list)
    incomplete: int = 0
    decision_t: list[float] = field(default_factory=list)
    lyapunov: list[float] = field(default_factory=list)
    sum_z: list[int] = field(default_factory=list)
    z_cv: list[int] = field(default_factory=list)
    sign_mismatches: list[int] = field(default_factory=list)
    nc_events: list[Any] = field(default_factory=list)
    signal_trace: list[tuple[float, str, str | None]] = field(default_factory=list)

    def record_tick(self, t: float, vehicles: int, queued: int, spillover: int) -> None:
        self.t.append(t)
        self.total_vehicles.append(vehicles)
        self.total_queued.append(queued)
        self.total_spillover.append(spillover)

    def total_on_network_and_sources(self) -> list[int]:
        return [v + s for v, s in zip(self.total_vehicles, self.total_spillover)]
