"""
Command-line entry point: run one figure sweep and write the CSV table.

Parameter precedence, lowest first: built-in defaults, the figure's own
settings, ``--config`` file, ``--seed``, ``--override`` pairs.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys

from .experiments import PRESETS, preset, run_experiment, rows_to_csv, write_csv
from .scenario import ConfigError, read_config_file

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2

log = logging.getLogger("cfisac")


def _key_value(text):
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfisac", description="Cell-free ISAC detection-probability sweeps.")
    parser.add_argument("--experiment", required=True, choices=sorted(PRESETS))
    parser.add_argument("--config", help="YAML file with scenario parameters")
    parser.add_argument("--seed", type=int, help="master seed (nonnegative)")
    parser.add_argument("--out", help="CSV output path (stdout if omitted)")
    parser.add_argument("--drops", type=int, help="UE/target drops")
    parser.add_argument("--realizations", type=int, help="channel realizations per drop")
    parser.add_argument("--override", action="append", type=_key_value, default=[], metavar="KEY=VALUE",
                        help="scenario parameter override (repeatable)")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for drops")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_spec(args):
    """Experiment spec from parsed arguments; raises :class:`ConfigError`."""
    base = preset(args.experiment).config
    changes = {}
    if args.config:
        changes.update(read_config_file(args.config))
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    changes.update(dict(args.override))
    config = base.with_overrides(changes)
    extra = {}
    if args.drops is not None:
        extra["drops"] = args.drops
    if args.realizations is not None:
        extra["realizations"] = args.realizations
    return preset(args.experiment, config, **extra)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = resolve_spec(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    rows = run_experiment(spec, progress=lambda d: log.info("drop %d/%d done", d + 1, spec.drops),
                          workers=max(1, args.workers))
    if args.out:
        write_csv(rows, args.out)
    else:
        sys.stdout.write(rows_to_csv(rows))

    bad = [r for r in rows if r["mc_trials"] == 0 or math.isnan(r["p_d"])]
    if bad:
        print(f"{len(bad)} of {len(rows)} rows have no feasible drop", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
