"""Command-line entry point: ``run``, ``medium`` and ``export``.

Exit status is 0 on success, 1 on usage or configuration errors and 2 on
failures while computing.
"""
import argparse
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .driver import export_bases, export_fields, export_indicators, run_experiment
from .grid import build_hierarchy
from .medium import MediumFormatError, generate_default_medium, read_cell_field, save_medium, write_cell_field

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="cemgms", description="CEM-GMsFEM experiments with online adaptive enrichment")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment from a key = value config file")
    run.add_argument("--config", help="config file; defaults reproduce the f1 uniform-enrichment setup")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable; beats the file)")
    run.add_argument("--out", help="output directory (overrides out_dir)")

    med = sub.add_parser("medium", help="generate or convert a medium file")
    msub = med.add_subparsers(dest="action", required=True, parser_class=_Parser)
    gen = msub.add_parser("generate", help="write the default channel-and-inclusion medium")
    gen.add_argument("--coarse-nx", type=int, default=10)
    gen.add_argument("--coarse-ny", type=int, default=10)
    gen.add_argument("--fine-per-coarse", type=int, default=20)
    gen.add_argument("--contrast", type=float, default=1e4)
    gen.add_argument("--out", required=True)
    conv = msub.add_parser("convert", help="validate a medium file and rewrite it at full precision")
    conv.add_argument("--in", dest="inp", required=True)
    conv.add_argument("--out", required=True)

    exp = sub.add_parser("export", help="export CSV grids from a finished run directory")
    exp.add_argument("run_dir")
    exp.add_argument("what", choices=["fields", "bases", "indicators"])
    exp.add_argument("--out", help="destination directory (defaults to the run directory)")
    return parser


def cmd_run(args):
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        config = load_config(args.config)
    else:
        config = ExperimentConfig()
    config = config.with_overrides(args.overrides)
    out_dir = args.out or config.out_dir or "run_output"
    comments = [f"config: {args.config or '<defaults>'}"]
    if args.overrides:
        comments.append("overrides: " + " ".join(args.overrides))
    for line in comments:
        print(f"# {line}")
    try:
        history, _ = run_experiment(config, out_dir=out_dir, comments=comments)
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    print(f"{'iter':>4} {'dof':>6} {'added':>6} {'L2 err %':>12} {'energy err %':>13} {'sum delta^2':>12}")
    for r in history:
        print(f"{r.iteration:>4} {r.dof:>6} {r.online_added:>6} {r.l2_error_pct:>12.4e} "
              f"{r.energy_error_pct:>13.4e} {r.sum_delta_sq:>12.4e}")
    print(f"results written to {os.path.join(out_dir, 'results.csv')}")
    return 0


def cmd_medium(args):
    if args.action == "generate":
        try:
            g = build_hierarchy(args.coarse_nx, args.coarse_ny, args.fine_per_coarse)
            m = generate_default_medium(g, args.contrast)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        save_medium(m, args.out)
        print(f"wrote {g.fine_nx}x{g.fine_ny} medium to {args.out} (min {m.kappa.min():g}, max {m.kappa.max():g})")
        return 0
    try:
        field = read_cell_field(args.inp)
    except FileNotFoundError:
        raise UsageError(f"medium file not found: {args.inp}") from None
    bad = np.argwhere(~(field > 0))
    if bad.size:
        r, c = bad[0]
        raise MediumFormatError(f"{args.inp}: row {r + 1}, column {c + 1}: non-positive coefficient {field[r, c]!r}")
    ny, nx = field.shape
    write_cell_field(args.out, field, nx, ny)
    print(f"wrote {nx}x{ny} medium to {args.out}")
    return 0


def cmd_export(args):
    out = args.out or args.run_dir
    if not os.path.isdir(args.run_dir):
        raise UsageError(f"run directory not found: {args.run_dir}")
    os.makedirs(out, exist_ok=True)
    fn = {"fields": export_fields, "indicators": export_indicators, "bases": export_bases}[args.what]
    try:
        paths = fn(args.run_dir, out if args.what != "bases" else os.path.join(out, "bases"))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    for p in paths:
        print(p)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "medium": cmd_medium, "export": cmd_export}[args.command]
    try:
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except MediumFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
