"""Command line entry point: ``gradflow-tensor run --preset fig1 --out runs/fig1``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import PRESETS, ExperimentConfig, load_schema, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradflow-tensor",
                                description="Over-parametrized tensor decomposition experiments")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a preset or a JSON config")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="path to a JSON experiment config")
    src.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--seed", type=int, action="append",
                     help="run only this seed (repeatable); overrides the config's seeds")
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")
    run.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("presets", help="print the preset configs as JSON")
    sub.add_parser("schema", help="print the config JSON schema")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print(json.dumps(PRESETS, indent=1))
        return 0
    if args.command == "schema":
        print(json.dumps(load_schema(), indent=1))
        return 0

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    else:
        doc = json.loads(json.dumps(PRESETS[args.preset]))
    if args.seed:
        doc["seeds"] = args.seed
    try:
        cfg = ExperimentConfig.from_dict(doc)
    except Exception as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    status, summary = run_experiment(cfg, args.out, jobs=args.jobs)
    for s in summary["seeds"]:
        brief = {k: s[k] for k in ("seed", "final_loss", "epochs_used", "discovery_order",
                                   "all_negative") if k in s}
        print(json.dumps(brief))
    return status


if __name__ == "__main__":
    sys.exit(main())
