"""Command line interface.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 runtime crash.
"""

from __future__ import annotations

import argparse
import json
import sys

from ..sim import ScriptedPolicy
from .checkpoint import CheckpointError
from .config import ABLATION_VARIANTS, ConfigError, load_config
from .orchestrate import RuntimeCrashError, ablate, evaluate_checkpoint, render_eval_table, train
from .verify import check

EXIT_OK = 0
EXIT_VERIFICATION_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_CRASH = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogduel",
        description="Actor/learner Q-training on the fog-of-war macro duel",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training session")
    p_train.add_argument("--config", required=True, help="JSON run configuration")
    p_train.add_argument(
        "--deterministic",
        action="store_true",
        help="force single-process deterministic mode regardless of the config",
    )
    p_train.add_argument("--out", help="run directory (default under the output root)")

    p_eval = sub.add_parser("evaluate", help="win-rate table for a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--games", required=True, type=int)
    p_eval.add_argument(
        "--opponents",
        default=",".join(p.value for p in ScriptedPolicy),
        help="comma-separated opponent list",
    )
    p_eval.add_argument("--seed", type=int, default=7)

    p_ablate = sub.add_parser("ablate", help="paired baseline/variant comparison")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--variant", required=True, choices=ABLATION_VARIANTS)
    p_ablate.add_argument("--out", help="ablation directory")

    sub.add_parser("check", help="run the fast verification suite")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = load_config(args.config)
            if args.deterministic:
                cfg.mode = "deterministic"
            result = train(cfg, run_dir=args.out)
            print(f"run directory: {result.run_dir}")
            print(
                f"stopped ({result.stop_reason}) after {result.train_steps} steps, "
                f"{result.episodes} episodes, {result.wall_seconds:.1f}s"
            )
            if result.final_eval:
                print("final eval win-rates:")
                for opp, rate in result.final_eval.items():
                    print(f"  {opp:<16} {rate:.3f}")
            return EXIT_OK
        if args.command == "evaluate":
            opponents = [o.strip() for o in args.opponents.split(",") if o.strip()]
            table = evaluate_checkpoint(args.checkpoint, opponents, args.games, seed=args.seed)
            print(render_eval_table(table))
            print(json.dumps(table, sort_keys=True))
            return EXIT_OK
        if args.command == "ablate":
            cfg = load_config(args.config)
            report = ablate(cfg, args.variant, run_dir=args.out)
            agg = report["aggregate_win_rate"]
            print(f"ablation {args.variant}: baseline={agg['baseline']} variant={agg['variant']}")
            print(f"details: {report['baseline']['run_dir']} vs {report['variant_run']['run_dir']}")
            return EXIT_OK
        if args.command == "check":
            ok, lines = check()
            for line in lines:
                print(line)
            return EXIT_OK if ok else EXIT_VERIFICATION_FAILURE
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except RuntimeCrashError as exc:
        print(f"runtime crash: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_CRASH
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime crash: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME_CRASH


def entry() -> None:
    sys.exit(main())
