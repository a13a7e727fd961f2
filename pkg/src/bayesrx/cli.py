"""Command-line entry point: ``bayesrx <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 training divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import glob
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, plots
from .modem import ConfigError, TraceParseError
from .nn import TrainingDivergence

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("bayesrx")


def _common(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(None), help="override the config seed")
    parser.add_argument("--out-dir", default=default("."), help="directory for CSV, SVG and decoder files")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads over blocks")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser():
    p = argparse.ArgumentParser(prog="bayesrx", description="Uncertainty-aware MIMO receiver testbench.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    for name, arg, text in (
        ("train-decoder", "config", "train and store the offline WBP decoders of a config"),
        ("run", "config", "run an experiment and write its CSV"),
        ("sweep", "config_glob", "run every config matching a glob into one CSV"),
        ("oracle", "config", "run the brute-force MAP oracles on a config's blocks"),
    ):
        sp = sub.add_parser(name, help=text)
        sp.add_argument(arg)
        _common(sp, suppress=True)
    sp = sub.add_parser("plot", help="render SVG plots from a results CSV")
    sp.add_argument("csv")
    sp.add_argument("plotspec")
    _common(sp, suppress=True)
    return p


def _config(args):
    cfg = harness.load_config(args.config)
    return cfg if args.seed is None else replace(cfg, seed=args.seed)


def dispatch(args) -> int:
    out = Path(args.out_dir)
    if args.threads < 1:
        raise ConfigError("--threads", "must be at least 1")
    if args.command == "run":
        cfg = _config(args)
        records = harness.run_experiment(cfg, out, args.threads)
        print(f"{len(records)} records -> {out / cfg.output}")
    elif args.command == "train-decoder":
        cfg = _config(args)
        paths = harness.train_decoders(cfg, out)
        if not paths:
            log.warning("config has no trainable decoder mode; nothing written")
        for path in paths:
            print(path)
    elif args.command == "sweep":
        paths = sorted(glob.glob(args.config_glob))
        if not paths:
            raise ConfigError("config_glob", f"no config matches {args.config_glob!r}")
        records = harness.sweep(paths, out, args.threads, args.seed)
        print(f"{len(records)} records from {len(paths)} configs -> {out / 'sweep.csv'}")
    elif args.command == "oracle":
        cfg = _config(args)
        records = harness.run_oracle(cfg, out, args.threads)
        print(f"{len(records)} oracle records -> {out / cfg.output}")
    elif args.command == "plot":
        for path in plots.emit_plots(args.csv, args.plotspec, out):
            print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (ConfigError, plots.PlotError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, TraceParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
