"""Command-line entry point: ``mmwpos <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from mmwpos.assoc import MASKS
from mmwpos.geometry import GeometryError
from mmwpos.harness import config as config_mod
from mmwpos.harness.config import ConfigError
from mmwpos.harness.experiments import DRIVERS, HarnessError, run_localization_mc
from mmwpos.inference import ResampleError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SUBCOMMANDS = ("bounds", "assoc-sweep", "localize", "mc", "validate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _masks(text):
    out = [x for x in text.split(",") if x]
    bad = [m for m in out if m not in MASKS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown mask(s) {bad}; choose from {sorted(MASKS)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmwpos", description="mmWave single-epoch positioning experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment JSON (default: shipped scenario)")
        sp.add_argument("--seed", type=int, help="single base seed, overrides the config's list")
        if out:
            sp.add_argument("--out", help="output CSV path; a .json sidecar is written next to it")

    sp = sub.add_parser("bounds", help="PEB/OEB/BEB/VAEB for all path combinations")
    common(sp)
    sp.add_argument("--max-nlos", type=int, help="largest number of NLOS paths in the sweep")

    sp = sub.add_parser("assoc-sweep", help="data-association error vs bias-prior std")
    common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--samples", type=int, help="Monte-Carlo samples per likelihood entry")
    sp.add_argument("--bias-stds", type=_floats)
    sp.add_argument("--masks", type=_masks)

    for name, text in (("localize", "one association + BP run"), ("mc", "localization Monte-Carlo")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--particles", type=int)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--msg-samples", type=int)
        if name == "mc":
            sp.add_argument("--workers", type=int, default=1)
        else:
            sp.add_argument("--associate", action="store_true",
                            help="run data association instead of using the true labels")

    sp = sub.add_parser("validate", help="check a config file against the schema")
    common(sp, out=False)
    return p


def _load(args) -> config_mod.ExperimentConfig:
    if args.config:
        return config_mod.load(args.config)
    return config_mod.default_config()


def _apply(cfg, args):
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seeds"] = [args.seed]
    for flag, fld in (("trials", "trials"), ("particles", "particles"), ("iterations", "iterations"),
                      ("msg_samples", "msg_samples"), ("samples", "assoc_samples"), ("out", "output")):
        v = getattr(args, flag, None)
        if v is not None:
            over[fld] = v
    if getattr(args, "max_nlos", None) is not None:
        over["bounds"] = config_mod.BoundsConfig(args.max_nlos, cfg.bounds.va_box)
    if getattr(args, "bias_stds", None) or getattr(args, "masks", None):
        over["assoc"] = config_mod.AssocConfig(
            args.bias_stds or cfg.assoc.bias_stds, args.masks or cfg.assoc.masks, cfg.assoc.orientation)
    if getattr(args, "associate", False):
        over["perfect_association"] = False
    over["kind"] = args.command
    return cfg.with_overrides(**over)


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        if args.command == "validate":
            print(f"ok: {args.config or 'default scenario'} (kind={cfg.kind}, hash={cfg.hash()})")
            return EXIT_OK
        cfg = _apply(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.kind == "mc":
            table = run_localization_mc(cfg, workers=max(1, args.workers))
        else:
            table = DRIVERS[cfg.kind](cfg)
    except (HarnessError, ResampleError, GeometryError, FloatingPointError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    if cfg.output:
        for path in table.write(cfg.output):
            logging.getLogger("mmwpos").info("wrote %s", path)
    else:
        sys.stdout.write(table.to_csv())
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
