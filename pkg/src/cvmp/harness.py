"""Run execution, output files, seed/penetration sweeps and fairness statistics."""

from __future__ import annotations

import csv
import io
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .controllers import RunResult, controller_from_config, run_policy
from .metrics import CompletedVehicle, MetricsSeries
from .scenario import Scenario, load_scenario, scenario_from_dict
from .stability import AdmissibilityError, scenario_admissibility

Penetration = float | Mapping[str, float]


def _mean(xs: Sequence[float]) -> float | None:
    return statistics.fmean(xs) if xs else None


def fairness_report(completed: Iterable[CompletedVehicle] | MetricsSeries) -> tuple[float | None, float | None, float | None]:
    """(mean CV delay, mean NV delay, NV minus CV); a class without completions yields None."""
    if isinstance(completed, MetricsSeries):
        completed = completed.completed
    cv, nv = [], []
    for v in completed:
        (cv if v.is_cv else nv).append(v.delay_s)
    m_cv, m_nv = _mean(cv), _mean(nv)
    gap = None if m_cv is None or m_nv is None else m_nv - m_cv
    return m_cv, m_nv, gap


def summarize(result: RunResult) -> dict[str, Any]:
    s = result.series
    sc = result.scenario
    cv, nv, gap = fairness_report(s)
    try:
        adm = scenario_admissibility(sc).to_json()
    except AdmissibilityError as exc:
        adm = {"feasible": None, "epsilon": None, "error": str(exc)}
    return {
        "scenario": sc.name,
        "controller": result.spec.type,
        "seed": result.seed,
        "horizon_s": s.t[-1] if s.t else 0.0,
        "penetration": sc.penetration.to_config(),
        "avg_delay_s": _mean([v.delay_s for v in s.completed]),
        "max_vehicles": max(s.total_vehicles, default=0),
        "max_queue": max(s.total_queued, default=0),
        "max_spillover": max(s.total_spillover, default=0),
        "avg_cv_delay_s": cv,
        "avg_nv_delay_s": nv,
        "cv_nv_gap_s": gap,
        "completed": len(s.completed),
        "incomplete": s.incomplete,
        "admissibility": adm,
        "nc_events": [e.to_json() for e in s.nc_events],
    }


def steps_csv(series: MetricsSeries, *, lyapunov: bool = True) -> str:
    """One row per tick; ``V_lyapunov`` is filled on rows that coincide with a decision instant."""
    v_at = dict(zip(series.decision_t, series.lyapunov)) if lyapunov else {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t", "total_vehicles", "total_queued", "total_spillover"]
    w.writerow(header + (["V_lyapunov"] if lyapunov else []))
    for t, n, q, b in zip(series.t, series.total_vehicles, series.total_queued, series.total_spillover):
        row = [f"{t:g}", n, q, b]
        if lyapunov:
            v = v_at.get(t)
            row.append("" if v is None else f"{v:.6f}")
        w.writerow(row)
    return buf.getvalue()


def vehicles_csv(series: MetricsSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vid", "od", "is_cv", "inject_time", "exit_time", "delay_s"])
    for v in series.completed:
        w.writerow([v.vid, v.od, int(v.is_cv), f"{v.inject_time:g}", f"{v.exit_time:.6f}", f"{v.delay_s:.6f}"])
    return buf.getvalue()


def output_stem(scenario: Scenario, controller: str, seed: int) -> str:
    return f"{scenario.name}_{controller}_{seed}"


def run_scenario(
    scenario: Scenario | str | Path,
    *,
    controller: str | Mapping[str, Any] | None = None,
    seed: int | None = None,
    penetration: Penetration | None = None,
    demand_scale: float | None = None,
    horizon_s: float | None = None,
    out_dir: str | Path | None = None,
    events: bool = False,
) -> tuple[RunResult, dict[str, Any]]:
    """Run one scenario with overrides; optionally write steps/vehicles CSV, summary JSON and event log."""
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    sc = sc.with_overrides(controller=controller, seed=seed, penetration=penetration,
                           demand_scale=demand_scale, horizon_s=horizon_s)
    spec = controller_from_config(sc.controller, T0_s=sc.sim.T0_s, Ty_s=sc.sim.Ty_s)
    result = run_policy(sc, spec, record_events=events)
    summary = summarize(result)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = output_stem(sc, spec.type, result.seed)
        (out / f"{stem}_steps.csv").write_text(steps_csv(result.series), encoding="utf-8")
        (out / f"{stem}_vehicles.csv").write_text(vehicles_csv(result.series), encoding="utf-8")
        (out / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        if events and result.events is not None:
            lines = (json.dumps({"tick": k, "vehicle": v, "event": e}) for k, v, e in result.events)
            (out / f"{stem}_events.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return result, summary


def penetration_label(p: Penetration) -> str:
    if isinstance(p, (int, float)):
        return f"{float(p):g}"
    return ",".join(f"{k}={float(v):g}" for k, v in p.items())


@dataclass
class SweepResult:
    seeds: list[int]
    rows: list[dict[str, Any]] = field(default_factory=list)
    failures: list[dict[str, Any]] = field(default_factory=list)

    METRICS = ("avg_delay_s", "max_vehicles", "max_queue", "max_spillover", "avg_cv_delay_s", "avg_nv_delay_s")

    def aggregate(self) -> list[dict[str, Any]]:
        """Mean and sample stddev across seeds per (controller, penetration), over completed runs only."""
        cells: dict[tuple[str, str], list[dict[str, Any]]] = {}
        for r in self.rows:
            cells.setdefault((r["controller"], r["penetration_label"]), []).append(r)
        out = []
        for (ctrl, pen), rows in cells.items():
            agg: dict[str, Any] = {"controller": ctrl, "penetration_label": pen, "n_runs": len(rows)}
            for m in self.METRICS:
                vals = [r[m] for r in rows if r[m] is not None]
                agg[f"{m}_mean"] = statistics.fmean(vals) if vals else None
                agg[f"{m}_std"] = statistics.stdev(vals) if len(vals) > 1 else (0.0 if vals else None)
            out.append(agg)
        return out

    def to_csv(self, aggregate: bool = False) -> str:
        rows = self.aggregate() if aggregate else [
            {k: v for k, v in r.items() if k not in ("nc_events", "admissibility", "penetration")} for r in self.rows
        ]
        if not rows:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
        return buf.getvalue()


def _sweep_cell(doc: dict[str, Any], controller: str, penetration: Penetration, seed: int, out_dir: str | None):
    try:
        _, summary = run_scenario(scenario_from_dict(doc), controller=controller, penetration=penetration,
                                  seed=seed, out_dir=out_dir)
        return summary, None
    except Exception as exc:  # recorded per cell so the sweep keeps going
        return None, f"{type(exc).__name__}: {exc}"


def sweep(
    scenario: Scenario | str | Path,
    controllers: Sequence[str],
    penetrations: Sequence[Penetration],
    seeds: Sequence[int],
    *,
    out_dir: str | Path | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Cartesian product of controllers x penetration configs x seeds, run in parallel."""
    if not controllers or not penetrations or not seeds:
        raise ValueError("sweep needs at least one controller, one penetration config and one seed")
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    doc = dict(sc.document, name=sc.name)
    cells = [(c, p, int(s)) for c in controllers for p in penetrations for s in seeds]
    out = None if out_dir is None else str(out_dir)
    result = SweepResult(seeds=[int(s) for s in seeds])
    if workers == 1:
        outcomes = [_sweep_cell(doc, c, p, s, out) for c, p, s in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_cell, doc, c, p, s, out) for c, p, s in cells]
            outcomes = [f.result() for f in futures]
    for (c, p, s), (summary, err) in zip(cells, outcomes):
        if err is not None:
            result.failures.append({"controller": c, "penetration_label": penetration_label(p), "seed": s, "error": err})
        else:
            result.rows.append({"penetration_label": penetration_label(p), **summary})
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{sc.name}_sweep_runs.csv").write_text(result.to_csv(), encoding="utf-8")
        (d / f"{sc.name}_sweep_aggregate.csv").write_text(result.to_csv(aggregate=True), encoding="utf-8")
        (d / f"{sc.name}_sweep.json").write_text(
            json.dumps({"seeds": result.seeds, "rows": result.rows, "failures": result.failures}, indent=2) + "\n",
            encoding="utf-8",
        )
    return result
