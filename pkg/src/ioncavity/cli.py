"""Command line: ``ioncavity {run,analyze,figures,validate-config}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, Mode, default_config, load
from .figures import MissingDataError, emit_figures

log = logging.getLogger("ioncavity")


def _config(args):
    cfg = load(args.config) if args.config else default_config()
    return cfg.with_overrides(seed=getattr(args, "seed", None), mode=getattr(args, "mode", None))


def cmd_run(args) -> int:
    cfg = _config(args)
    bundle = pipeline.run(cfg, paper_scale=args.paper_scale, debug_origins=args.debug_origins)
    out = Path(args.out)
    bundle.files["config.toml"] = cfg.dumps()
    bundle.write(out)
    print((out / "summary.txt").read_text(), end="")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args).with_overrides(mode=Mode.ANALYZE_ONLY.value)
    bundle = pipeline.run(cfg, paper_scale=args.paper_scale, input_path=Path(args.input) if args.input else None)
    bundle.write(Path(args.out))
    print((Path(args.out) / "summary.txt").read_text(), end="")
    return 0


def cmd_figures(args) -> int:
    cfg = _config(args)
    for path in emit_figures(Path(args.out), drive_us=cfg["sequence"]["drive_us"]):
        print(path)
    return 0


def cmd_validate(args) -> int:
    cfg = _config(args)
    print(cfg.dumps(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ioncavity", description="Ion-cavity single-photon source simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (TOML); defaults are used when omitted")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit), overrides run.master_seed")
    common.add_argument("--mode", choices=[m.value for m in Mode], type=str.upper, help="override the config mode")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--paper-scale", action="store_true",
                        help="analyse at the experiment's trial count (run.paper_trials) instead of run.n_trials")
    common.add_argument("--debug-origins", action="store_true", help="add the click origin column to clicks.csv")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="simulate and analyse per the config mode").set_defaults(func=cmd_run)
    p = sub.add_parser("analyze", parents=[common], help="analyse an existing time-tag CSV")
    p.add_argument("--input", help="time-tag CSV (time_ps,detector); defaults to analysis.input")
    p.set_defaults(func=cmd_analyze)
    sub.add_parser("figures", parents=[common], help="write plot scripts into --out").set_defaults(func=cmd_figures)
    sub.add_parser("validate-config", parents=[common],
                   help="check a config and print its canonical form").set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (MissingDataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
