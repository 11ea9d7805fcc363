"""Command-line entry points: ``simulate``, ``classify``, ``private-share``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .demand import PRESETS, load_scenario, preset
from .fees import DEFAULT_PARAMS, ProtocolParams
from .ingest import classify_trace, private_share, write_private_share_csv
from .mempool import EligibilityWindow
from .simulator import export_run, run


def _scenario(ref: str, seed: Optional[int]):
    if ref in PRESETS:
        return preset(ref, seed=0 if seed is None else seed)
    scenario = load_scenario(ref)
    return scenario if seed is None else scenario.with_overrides(seed=seed)


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _scenario(args.scenario, args.seed)
    if args.slots is not None:
        scenario = scenario.with_overrides(horizon_slots=args.slots)
    result = run(scenario, shadow_pricing=args.shadow_pricing)
    out = export_run(result, args.out)
    print(f"{len(result.metrics.slots)} slots written to {out}")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    params = ProtocolParams.from_json(args.params.read_text(encoding="utf-8")) if args.params else DEFAULT_PARAMS
    window = EligibilityWindow(min_lead=args.min_lead, max_age=args.max_age)
    report = classify_trace(args.blocks, args.mempool, window, params, out_dir=args.out)
    for issue in report.issues:
        print(f"warning: {issue}", file=sys.stderr)
    if report.unresolved:
        print(f"warning: {report.unresolved} included tx ids not in mempool file", file=sys.stderr)
    print(json.dumps(report.summary["verdicts"]["counts"], sort_keys=True))
    return 0


def cmd_private_share(args: argparse.Namespace) -> int:
    series = private_share(args.blocks, args.mempool, args.sender or None)
    if args.out:
        write_private_share_csv(args.out, series)
    else:
        write_private_share_csv(sys.stdout, series)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blobmarket", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and export metrics")
    sim.add_argument("--scenario", required=True, help=f"JSON file or preset ({', '.join(PRESETS)})")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--slots", type=int, default=None, help="override the scenario horizon")
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--shadow-pricing", action="store_true", help="also pack every slot both ways")
    sim.set_defaults(func=cmd_simulate)

    cls = sub.add_parser("classify", help="audit a block dump against a mempool dump")
    cls.add_argument("--blocks", required=True, type=Path)
    cls.add_argument("--mempool", required=True, type=Path)
    cls.add_argument("--min-lead", type=float, default=4.0)
    cls.add_argument("--max-age", type=float, default=120.0)
    cls.add_argument("--params", type=Path, default=None, help="protocol parameter JSON")
    cls.add_argument("--out", required=True, type=Path)
    cls.set_defaults(func=cmd_classify)

    priv = sub.add_parser("private-share", help="daily share of blob txs never seen publicly")
    priv.add_argument("--blocks", required=True, type=Path)
    priv.add_argument("--mempool", required=True, type=Path)
    priv.add_argument("--sender", action="append", help="restrict the breakdown (repeatable)")
    priv.add_argument("--out", type=Path, default=None, help="CSV path; stdout if omitted")
    priv.set_defaults(func=cmd_private_share)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
