"""Command-line interface.

    mgcosim run <preset-or-config.ini> [--seed S] [--replicas R]
                [--out DIR] [--traces] [--workers K] [--no-figures]
    mgcosim compare <dirA> <dirB>
    mgcosim presets list
    mgcosim presets show <name>
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import presets as presets_mod
from . import scenario
from .engine import HandlerError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgcosim",
        description="Co-simulate a DC microgrid's distributed voltage "
                    "restoration over a contended 802.11 channel.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario over one or more seeds")
    run.add_argument("config", help="preset name or path to an INI document")
    run.add_argument("--seed", type=int, default=None,
                     help="override the base seed")
    run.add_argument("--replicas", type=int, default=None,
                     help="override the replica count")
    run.add_argument("--out", default=None,
                     help="output directory (default: runs/<config name>)")
    run.add_argument("--traces", action="store_true",
                     help="write per-run event/frame/plant/consensus traces")
    run.add_argument("--workers", type=int, default=1,
                     help="worker processes for replica execution")
    run.add_argument("--no-figures", action="store_true",
                     help="skip figure rendering")

    cmp_p = sub.add_parser("compare", help="paired comparison of two batches")
    cmp_p.add_argument("dir_a")
    cmp_p.add_argument("dir_b")

    pre = sub.add_parser("presets", help="list or show shipped presets")
    pre.add_argument("action", choices=["list", "show"])
    pre.add_argument("name", nargs="?", default=None)
    return parser


def _resolve_config(token: str) -> tuple[str, scenario.ScenarioConfig]:
    if token in presets_mod.PRESETS:
        return token, scenario.load_config(presets_mod.PRESETS[token])
    path = Path(token)
    if not path.exists():
        raise scenario.ConfigError(
            f"{token!r} is neither a preset ({', '.join(presets_mod.PRESETS)}) "
            f"nor an existing file")
    return path.stem, scenario.load_config(path)


def _cmd_run(args: argparse.Namespace) -> int:
    name, cfg = _resolve_config(args.config)
    out_dir = Path(args.out) if args.out else Path("runs") / name
    batch = scenario.run_batch(
        cfg, out_dir=out_dir, seed=args.seed, replicas=args.replicas,
        workers=max(1, args.workers), traces=args.traces,
        figures=not args.no_figures, progress=True)
    sys.stdout.write(scenario.render_summary(batch))
    print(f"outputs written to {out_dir}")
    if batch.aborts:
        print(f"error: {len(batch.aborts)} replica(s) aborted", file=sys.stderr)
        return 3
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    sys.stdout.write(scenario.compare(args.dir_a, args.dir_b))
    return 0


def _cmd_presets(args: argparse.Namespace) -> int:
    if args.action == "list":
        for name in presets_mod.PRESETS:
            print(f"{name:15s} {presets_mod.DESCRIPTIONS[name]}")
        return 0
    if args.name not in presets_mod.PRESETS:
        print(f"unknown preset {args.name!r}", file=sys.stderr)
        return 2
    sys.stdout.write(presets_mod.PRESETS[args.name])
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_presets(args)
    except (scenario.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HandlerError, FloatingPointError) as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
