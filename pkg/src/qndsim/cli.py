"""Command-line entry point."""

import argparse
import logging
import sys

import numpy as np

from .config import load_config
from .errors import (ArtifactError, CalibrationError, ConfigError, DomainError, FitError,
                     NumericError, SamplingError)
from .pipeline import STAGES, run

EXIT_OK, EXIT_CONFIG, EXIT_CALIBRATION, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="qndsim", description=__doc__)
    p.add_argument("command", nargs="?", choices=STAGES + ("all",))
    p.add_argument("--stage", choices=STAGES + ("all",), help="alternative to the positional command")
    p.add_argument("--config", help="JSON config file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--shots", type=int, help="override shot_count")
    p.add_argument("--motion", choices=("on", "off"), help="atomic motion in the ensemble")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def configure(args):
    cfg = load_config(args.config)
    kw = {}
    if args.seed is not None:
        kw["master_seed"] = args.seed
    if args.out is not None:
        kw["output_dir"] = args.out
    if args.shots is not None:
        kw["shot_count"] = args.shots
    if kw:
        cfg = cfg.replace(**kw)
    if args.motion is not None:
        cfg.ensemble.motion = args.motion == "on"
        if cfg.ensemble.motion:
            cfg.ensemble.coupling_model = "thermal"
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.stage or args.command
    if command is None or (args.stage and args.command and args.stage != args.command):
        parser.print_usage(sys.stderr)
        print("qndsim: give exactly one command", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = configure(args)
        manifest = run(command, cfg)
    except (ConfigError, ArtifactError) as exc:
        print(f"qndsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"qndsim: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (FitError, NumericError, SamplingError, DomainError, np.linalg.LinAlgError) as exc:
        print(f"qndsim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in manifest.files():
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
