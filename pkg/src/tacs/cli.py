"""Command-line entry point.

Every subcommand works on an artifact directory (``--out``).  ``run``
executes a whole experiment; the other subcommands run one stage and read
what earlier stages left in the directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, _accel, pipeline
from .errors import ConfigError, NumericalError, ResourceGuardError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 2, 3, 4

STAGE_HELP = {
    "ground": "sample classical shadows of ground states over the h_x grid",
    "tacs": "sample time-averaged classical shadows over the h_x grid",
    "kernel": "shadow-kernel Gram matrix of the stored datasets",
    "diffmap": "diffusion-map embedding of the stored kernel",
    "observables": "susceptibilities, kernel diagnostics and time traces",
    "entropy": "purity and Renyi-2 estimates on centered blocks",
    "bayes": "Metropolis fit of the purity model per h_x",
    "fit": "power-law fits of dc2 and shift propagation",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tacs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__} ({_accel.BACKEND} backend)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="artifact directory")
    common.add_argument("--threads", type=int, help="worker threads for per-h_x jobs")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a configuration key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run a full experiment")
    for name, text in STAGE_HELP.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _resolve_config(args) -> pipeline.RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        return pipeline.parse_config(text, overrides, source=str(args.config))
    if args.out is not None and (args.out / pipeline.CONFIG_FILE).is_file():
        path = args.out / pipeline.CONFIG_FILE
        return pipeline.parse_config(path.read_text(encoding="utf-8"), overrides, source=str(path))
    return pipeline.parse_config("", overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "run":
            out, ran = pipeline.run(cfg)
            state = "complete" if ran else "up to date"
            print(f"{cfg.experiment}: {state} in {out}")
        else:
            written = pipeline.run_stage(cfg, args.command)
            for path in written:
                print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (NumericalError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
