"""Command-line entry point: ``lab run | validate | list-experiments``.

Exit codes: 0 success, 1 ExperimentError, 2 ConfigError, 3 I/O failure.
"""

import argparse
import json
import sys

from .errors import ConfigError, ExperimentError, ParseError
from .experiments import EXPERIMENTS, load_config, run_experiment

EXIT_OK, EXIT_EXPERIMENT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    run.add_argument("--deterministic", action="store_true", help="single-threaded, ordered reductions")

    val = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    val.add_argument("config")

    sub.add_parser("list-experiments", help="list experiment names")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "list-experiments":
            for name, desc in EXPERIMENTS.items():
                print(f"{name:22s} {desc}")
            return EXIT_OK
        if args.command == "validate":
            cfg = load_config(args.config)
            print(json.dumps(cfg.raw, indent=2))
            return EXIT_OK
        cfg = load_config(args.config, output_dir=args.out)
        manifest = run_experiment(cfg, threads=args.threads, deterministic=args.deterministic or None)
        print(f"{cfg.name}: wrote {len(manifest['files'])} files to {cfg.output_dir}")
        return EXIT_OK
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"experiment error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
