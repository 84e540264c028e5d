"""Command-line entry point: run, sweep, check-admissible, audit-weights."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .controllers import CONTROLLER_TYPES, controller_from_config
from .fixtures import PACKAGED, packaged_scenario
from .network import ScenarioError
from .scenario import Scenario, load_scenario
from .stability import AdmissibilityError, audit_weights, check_admissible


def _scenario(arg: str) -> Scenario:
    path = Path(arg)
    if not path.exists() and arg in PACKAGED:
        return packaged_scenario(arg)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {arg}")
    return load_scenario(path)


def parse_penetration(items: Sequence[str] | None):
    """``['0.5']`` -> 0.5; ``['main=0.3', 'side=0.15']`` or ``['main=0.3,side=0.15']`` -> dict."""
    if not items:
        return None
    parts = [p for item in items for p in item.split(",") if p]
    if len(parts) == 1 and "=" not in parts[0]:
        return float(parts[0])
    out = {}
    for p in parts:
        key, sep, val = p.partition("=")
        if not sep:
            raise ScenarioError(f"penetration entry {p!r} is not key=value")
        out[key.strip()] = float(val)
    return out


def parse_seeds(text: str) -> list[int]:
    """``'1..5'`` (inclusive range) or ``'1,4,7'``."""
    text = text.strip()
    if not text:
        return []
    if ".." in text:
        lo, hi = (int(x) for x in text.split(".."))
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cvmp", description="Max-pressure signal control experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--scenario", required=True, help=f"scenario JSON path or packaged name {PACKAGED}")
    run.add_argument("--controller", choices=CONTROLLER_TYPES)
    run.add_argument("--seed", type=int)
    run.add_argument("--penetration", nargs="+", metavar="K=V", help="uniform rate or key=value overrides")
    run.add_argument("--demand-scale", type=float)
    run.add_argument("--horizon", type=float, help="override sim.horizon_s")
    run.add_argument("--events", action="store_true", help="write the per-vehicle event log")
    run.add_argument("--out", default="out")

    sw = sub.add_parser("sweep", help="controllers x penetrations x seeds")
    sw.add_argument("--scenario", required=True)
    sw.add_argument("--controllers", required=True, help="comma-separated controller types")
    sw.add_argument("--penetrations", nargs="+", required=True,
                    help="each item is a uniform rate or a comma-separated key=value map")
    sw.add_argument("--seeds", required=True, help="'1..5' or '1,2,3'")
    sw.add_argument("--workers", type=int)
    sw.add_argument("--out", default="out")

    ca = sub.add_parser("check-admissible", help="admissible-demand LP for a scenario")
    ca.add_argument("--scenario", required=True)
    ca.add_argument("--demand-scale", type=float, default=1.0)
    ca.add_argument("--stat", choices=("mean", "peak"), default="mean")

    aw = sub.add_parser("audit-weights", help="weight-condition audit along one trajectory")
    aw.add_argument("--scenario", required=True)
    aw.add_argument("--controller", choices=CONTROLLER_TYPES)
    aw.add_argument("--seed", type=int)
    aw.add_argument("--horizon", type=float)
    return ap


def _cmd_run(args) -> int:
    from .harness import run_scenario

    _, summary = run_scenario(
        _scenario(args.scenario), controller=args.controller, seed=args.seed,
        penetration=parse_penetration(args.penetration), demand_scale=args.demand_scale,
        horizon_s=args.horizon, out_dir=args.out, events=args.events,
    )
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    from .harness import sweep

    controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
    for c in controllers:
        if c not in CONTROLLER_TYPES:
            raise ScenarioError(f"unknown controller {c!r}")
    seeds = parse_seeds(args.seeds)
    if not seeds:
        raise ScenarioError("empty seed list")
    pens = [parse_penetration([p]) for p in args.penetrations]
    res = sweep(_scenario(args.scenario), controllers, pens, seeds, out_dir=args.out, workers=args.workers)
    sys.stdout.write(res.to_csv(aggregate=True))
    for f in res.failures:
        print(f"failed: {f}", file=sys.stderr)
    return 0 if not res.failures else 1


def _cmd_check(args) -> int:
    sc = _scenario(args.scenario).with_overrides(demand_scale=args.demand_scale)
    report = check_admissible(sc.network, routed=sc.routed_demand(args.stat))
    print(json.dumps(report.to_json(), indent=2))
    return 0


def _cmd_audit(args) -> int:
    sc = _scenario(args.scenario).with_overrides(controller=args.controller, seed=args.seed)
    spec = controller_from_config(sc.controller, T0_s=sc.sim.T0_s, Ty_s=sc.sim.Ty_s)
    reports = audit_weights(sc, spec, horizon_s=args.horizon)
    out = {k.value: r.to_json() for k, r in reports.items()}
    print(json.dumps(out, indent=2))
    return 0 if all(r.violations == 0 for r in reports.values()) else 1


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "check-admissible": _cmd_check, "audit-weights": _cmd_audit}
    try:
        return handler[args.command](args)
    except (ScenarioError, AdmissibilityError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
