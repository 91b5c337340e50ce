"""Command-line front end.

    placelearn gen      --config cfg.json
    placelearn train    --config cfg.json --method shared
    placelearn eval     --config cfg.json --scenario NENO --method shared
    placelearn rank     --config cfg.json --task 7 --top-k 5
    placelearn simulate --config cfg.json --task 7 [--candidate-id 123]

Every flag overrides the corresponding config key; the config file is
otherwise the single source of truth.  Exit status 0 means the command
completed; bad usage exits 2, runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, PipelineConfig, apply_overrides, load_config
from .evaluate import Scenario
from .pipeline import METHODS, MissingDataError

log = logging.getLogger("placelearn")

EVAL_METHODS = METHODS + ("chance", "flat_upright", "lowest_point")


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="placelearn",
        description="Point-cloud placing pipeline: generate labeled scenes, "
                    "train rankers, evaluate, rank, simulate.")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH",
                       help="JSON config file (defaults to built-in config)")
        p.add_argument("--seed-override", type=int, metavar="N",
                       help="replace the train/test/baseline seeds")
        p.add_argument("--workers", type=int, metavar="N",
                       help="parallel dataset builders (0 = all processors)")
        p.add_argument("--outdir", metavar="DIR",
                       help="output directory override")
        return p

    common(sub.add_parser("gen", help="generate labeled train/test datasets"))

    p_train = common(sub.add_parser("train", help="fit models on the train split"))
    p_train.add_argument("--method", choices=METHODS, default="independent")

    p_eval = common(sub.add_parser("eval", help="rank test sets and report metrics"))
    p_eval.add_argument("--scenario", required=True,
                        choices=[s.value for s in Scenario])
    p_eval.add_argument("--method", choices=EVAL_METHODS, default="independent")

    p_rank = common(sub.add_parser(
        "rank", help="rank one task's candidates and verify the top k"))
    p_rank.add_argument("--task", type=int, required=True)
    p_rank.add_argument("--top-k", type=int, default=5)
    p_rank.add_argument("--method", choices=METHODS, default="independent")

    p_sim = common(sub.add_parser(
        "simulate", help="settle one stored candidate and dump its trajectory"))
    p_sim.add_argument("--task", type=int, required=True)
    p_sim.add_argument("--candidate-id", type=int, default=None)
    return top


def _load(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return apply_overrides(cfg, seed_override=args.seed_override,
                           workers=args.workers, outdir=args.outdir)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "gen":
            manifest = pipeline.cmd_gen(cfg)
            print(f"gen: {len(manifest['tasks'])} tasks -> {cfg.outdir}; "
                  f"totals {manifest['totals']}")
        elif args.command == "train":
            paths = pipeline.cmd_train(cfg, args.method)
            print(f"train[{args.method}]: {len(paths)} model files -> "
                  f"{cfg.outdir}/models/{args.method}")
        elif args.command == "eval":
            report = pipeline.cmd_eval(cfg, args.scenario, args.method)
            print(report.to_text())
        elif args.command == "rank":
            rows = pipeline.cmd_rank(cfg, args.task, args.top_k, args.method)
            for r in rows:
                mark = "  <-- first verified valid" if r["first_verified_valid"] else ""
                print(f"#{r['rank']}: candidate {r['candidate_id']} "
                      f"score={r['score']:.4f} "
                      f"verified_stable={r['verified_stable']}{mark}")
        elif args.command == "simulate":
            path = pipeline.cmd_simulate(cfg, args.task, args.candidate_id)
            print(f"trajectory written to {path}")
        return 0
    except (ConfigError, MissingDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
