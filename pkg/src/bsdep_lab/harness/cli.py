"""``bsdep-lab`` command line."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import KINDS, ConfigError, parse_config
from .runner import RunError, run_experiment

_HELP = {
    "solve": "backward regression solve",
    "picard": "Picard iteration, checked against the backward solve",
    "minimal": "minimal solution through the inf-convolution sequence",
    "compare": "pathwise comparison of two solutions on one ensemble",
    "oracle": "linear equation: solver against the measure-change representation",
    "validate": "sampling checks of the declared driver assumptions",
    "infinite": "infinite horizon by truncation",
    "simulate": "draw and dump a noise ensemble",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsdep-lab", description="BSDEs with jumps: solvers and checkers.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for kind in KINDS:
        p = sub.add_parser(kind, help=_HELP[kind], description=_HELP[kind])
        p.add_argument("--config", required=True, metavar="PATH", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override ensemble.seed")
        p.add_argument("--out", metavar="DIR", help="output directory (default: output.dir or ./out)")
        p.add_argument("--paths", type=int, help="override ensemble.paths")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"bsdep-lab: cannot read config {args.config!r}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"bsdep-lab: {args.config}: JSON syntax error at line {exc.lineno}: {exc.msg}", file=sys.stderr)
        return 1
    if isinstance(raw, dict):
        if raw.setdefault("kind", args.command) != args.command:
            print(f"bsdep-lab: config kind {raw['kind']!r} does not match command {args.command!r}", file=sys.stderr)
            return 1
        ens = raw.setdefault("ensemble", {}) if (args.seed is not None or args.paths is not None) else None
        if args.seed is not None:
            ens["seed"] = args.seed
        if args.paths is not None:
            ens["paths"] = args.paths
    try:
        cfg = parse_config(raw)
        manifest = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"bsdep-lab: {args.config}: {exc}", file=sys.stderr)
        return 1
    except RunError as exc:
        print(f"bsdep-lab: {exc}", file=sys.stderr)
        return 1
    return manifest.exit_status


if __name__ == "__main__":
    sys.exit(main())
