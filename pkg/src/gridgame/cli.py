"""Command-line entry point: ``gridgame {validate,attack-rank,defend,recommend,run}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .config import PipelineConfig
from .netmodel import CaseError, bundled_case_path, load_case
from .pipeline import STAGES, StageError, run_pipeline
from .powerflow import solve_power_flow

COMMAND_STAGE = {"attack-rank": "attack", "defend": "defend", "recommend": "recommend", "run": "recommend"}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="case JSON file (default: bundled IEEE 69-bus)")
    common.add_argument("--seed", type=int, help="global random seed (default 42)")
    common.add_argument("--config", help="JSON file overriding configuration defaults")
    common.add_argument("--out", help="output directory (default ./results)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gridgame", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a case file and solve its base power flow")
    for name in ("attack-rank", "defend", "recommend"):
        sp = sub.add_parser(name, parents=[common], help=f"run the pipeline through the {COMMAND_STAGE[name]} stage")
        sp.add_argument("--fresh", action="store_true", help="ignore stage artifacts already in --out")
    run = sub.add_parser("run", parents=[common], help="full pipeline")
    run.add_argument("--stage", choices=STAGES, default="recommend", help="last stage to run")
    run.add_argument("--resume", action="store_true", help="reuse matching stage artifacts in --out")
    run.add_argument("--no-figures", action="store_true")
    return p


def build_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    updates = {}
    if args.case:
        updates["case_path"] = args.case
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out:
        updates["out_dir"] = args.out
    if getattr(args, "no_figures", False):
        updates["figures"] = False
    return replace(cfg, **updates)


def cmd_validate(cfg: PipelineConfig) -> int:
    path = cfg.case_path or bundled_case_path()
    net = load_case(path)
    sol = solve_power_flow(net)
    summary = {
        "case": net.name,
        "buses": len(net.buses),
        "branches": len(net.branches),
        "ties": len(net.tie_switches),
        "ders": len(net.ders),
        "critical": sorted(net.critical_buses),
        "total_load_kw": net.total_load,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "max_mismatch_pu": sol.max_mismatch,
        "min_voltage_pu": sol.min_voltage,
    }
    print(json.dumps(summary, indent=2))
    return 0 if sol.converged else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        cfg = build_config(args)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "run":
            until, resume = args.stage, args.resume
        else:
            until, resume = COMMAND_STAGE[args.command], not args.fresh
        run_pipeline(cfg, until=until, resume=resume)
    except (FileNotFoundError, CaseError, ValueError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"results written to {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
