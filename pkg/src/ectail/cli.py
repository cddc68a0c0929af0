"""Command-line front end.

    ectail run CONFIG [--seed-override S ...] [--out DIR] [--allow-unstable]
                      [--scenario NAME] [--figures]

Exit codes: 0 every enabled verdict passed, 1 a verdict failed, 2 the config
could not be loaded, 3 a runtime fault (simulation or analysis error).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import SCENARIOS, ConfigError, load_config
from .experiment import EXIT_CONFIG, EXIT_RUNTIME, run_experiment, write_bundle

log = logging.getLogger("ectail")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ectail", description="Tail-latency experiments for erasure-coded storage.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="TOML experiment config")
    run.add_argument("--seed-override", type=int, nargs="+", metavar="SEED", help="replace the config's seed list")
    run.add_argument("--out", help="output directory (default: output.directory from the config)")
    run.add_argument("--allow-unstable", action="store_true", help="simulate even when some server has rho >= 1")
    run.add_argument("--scenario", choices=SCENARIOS, help="override the config's scenario")
    run.add_argument("--figures", action="store_true", help="also render PNG figures from the curve files")
    return p


def _apply_overrides(cfg, args):
    update = {}
    if args.seed_override:
        update["seeds"] = args.seed_override
    if args.scenario:
        update["scenario"] = args.scenario
    if args.allow_unstable:
        update["simulation"] = cfg.simulation.model_copy(update={"allow_unstable": True})
    if not update:
        return cfg
    # round-trip through validation so overrides obey the same schema
    return type(cfg).model_validate({**cfg.model_dump(), **{k: (v.model_dump() if hasattr(v, "model_dump") else v) for k, v in update.items()}})


def _summary_line(report) -> str:
    parts = []
    for name, sec in sorted(report["verdicts"].items()):
        hill = sec.get("pooled", {}).get("hill", {})
        est = hill.get("index_hat")
        est_s = f"{est:.4g}" if isinstance(est, float) else "n/a"
        parts.append(f"{name}={sec['verdict']} (hill {est_s} vs {sec['predicted']})")
    return "; ".join(parts) or "no verdicts"


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output.directory
    stab = cfg.stability()
    log.info("stability %s, max rho %.4g", stab.verdict, float(stab.rho.max()))
    try:
        bundle = run_experiment(cfg)
        write_bundle(bundle, out, figures=args.figures or cfg.output.figures)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    rep = bundle.report
    for seed, err in sorted(rep["errors"].items()):
        print(f"seed {seed}: {err}", file=sys.stderr)
    print(_summary_line(rep))
    print(json.dumps({"exit_status": rep["exit_status"], "out": str(out)}))
    return rep["exit_status"]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
