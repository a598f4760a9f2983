#!/usr/bin/env python3
"""
quantlab

Runs the lab's experiments and compares result tables.

Usage:
    python3 scripts/quantlab.py mutual-info --config configs/mutual_info.yaml --out results/mi.csv
    python3 scripts/quantlab.py grad-stats --config configs/grad_stats.yaml --set n_trials=20 --threads 4
    python3 scripts/quantlab.py rate-surface --config configs/rate_surface.yaml --print-config
    python3 scripts/quantlab.py compare results/a.csv results/b.csv --tolerances configs/tolerances.yaml

Exit codes: 0 success, 1 comparison failed, 2 configuration error, 3 numerical failure.
"""

import json
import sys
from pathlib import Path
from typing import List, Optional

import yaml

# Add project root to Python path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from core.errors import ConfigError, QuantLabError
from core.lab import EXPERIMENTS, TOOL_VERSION, ExperimentConfig, apply_overrides, compare, load_config, read_table, run
from scripts.shared import Colors, create_base_parser, emit_error
from telemetry.logger import RunLogger, default_telemetry_dir


def build_parser():
    parser = create_base_parser("Numerical lab for quantization surrogates", TOOL_VERSION)
    commands = parser.add_subparsers(dest="command", required=True)

    for experiment in EXPERIMENTS:
        sub = commands.add_parser(experiment, help=f"Run the {experiment} experiment")
        sub.add_argument("--config", help="YAML experiment config")
        sub.add_argument("--seed", type=int, help="Root seed (overrides the config)")
        sub.add_argument("--out", help="CSV output path (overrides the config)")
        sub.add_argument("--json", action="store_true", help="Also write a JSON mirror next to the CSV")
        sub.add_argument("--threads", type=int, help="Worker threads for grid points")
        sub.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                         help="Override one parameter (value parsed as YAML); repeatable")
        sub.add_argument("--print-config", action="store_true", help="Print the resolved config and exit")
        sub.add_argument("--no-telemetry", action="store_true", help="Do not append to quantlab_runs.jsonl")

    cmp = commands.add_parser("compare", help="Compare two result tables")
    cmp.add_argument("table_a")
    cmp.add_argument("table_b")
    cmp.add_argument("--tolerances", help="YAML tolerances: default and per-column abs/rel/se+k")
    return parser


def resolve_config(args) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {"experiment": args.command}
    if data.get("experiment", args.command) != args.command:
        raise ConfigError(f"Config {args.config} is for experiment {data.get('experiment')!r}, not {args.command!r}")
    data = apply_overrides({**data, "experiment": args.command}, args.assignments)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["output_path"] = args.out
    if args.threads is not None:
        data["threads"] = args.threads
    return ExperimentConfig.from_dict(data)


def run_experiment(args) -> int:
    config = resolve_config(args)
    if args.print_config:
        print(config.to_yaml(), end="")
        return 0

    logger = None if args.no_telemetry else RunLogger(default_telemetry_dir(config.output_path))
    print(f"Running {config.experiment} (seed {config.seed}, {config.threads} thread(s))")
    table = run(config, logger=logger, json_mirror=args.json)
    if config.output_path:
        print(f"Wrote {len(table.rows)} rows to {config.output_path}")
    else:
        print(table.csv_text(), end="")
    for key, value in table.summary.items():
        print(f"  {key}: {json.dumps(value)}")
    return 0


def run_compare(args) -> int:
    tolerances = None
    if args.tolerances:
        with open(args.tolerances) as f:
            tolerances = yaml.safe_load(f) or {}
    report = compare(read_table(args.table_a), read_table(args.table_b), tolerances)
    for deviation in report.deviations:
        print(f"{Colors.verdict(deviation.passed)}  {deviation.column:24s} "
              f"max_abs={deviation.max_abs:.3e} max_rel={deviation.max_rel:.3e}")
    print(f"{Colors.BOLD}Overall:{Colors.RESET} {Colors.verdict(report.passed)}")
    return 0 if report.passed else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.no_color:
        Colors.disable()
    try:
        if args.command == "compare":
            return run_compare(args)
        return run_experiment(args)
    except QuantLabError as e:
        return emit_error(e)


if __name__ == "__main__":
    sys.exit(main())
