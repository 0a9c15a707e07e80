"""Command-line entry points.

    nlip run --config exp.ini [--out DIR]
    nlip validate --config exp.ini
    nlip wave-recon --config exp.ini [--out DIR]
    wave-recon --config exp.ini [--out DIR]

Exit status is 0 when every invariant check passes, 1 when a check fails and
2 for configuration or runtime errors.  ``NLIP_THREADS`` sets the worker count.
"""

from __future__ import annotations

import argparse
import sys

from .config import PIPELINES, load_config
from .errors import ConfigError, NlipError
from .pipelines import run_experiment

EXIT_OK, EXIT_CHECKS, EXIT_ERROR = 0, 1, 2
WAVE_PIPELINES = ("wave-fig4", "wave-sweep")


def _run(config: str, out: str | None, allowed=PIPELINES) -> int:
    cfg = load_config(config)
    if cfg.pipeline not in allowed:
        raise ConfigError(f"pipeline {cfg.pipeline!r} is not one of {', '.join(allowed)}")
    manifest, checks = run_experiment(cfg, out)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name} = {c.value:.6g} ({c.threshold})")
    print(f"manifest: {manifest}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECKS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlip", description="Inverse problems for nonlinear PDEs: experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run a pipeline"), ("wave-recon", "run a wave reconstruction pipeline")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p = sub.add_parser("validate", help="parse and validate a config without running it")
    p.add_argument("--config", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"ok: pipeline {cfg.pipeline}")
            return EXIT_OK
        allowed = WAVE_PIPELINES if args.command == "wave-recon" else PIPELINES
        return _run(args.config, args.out, allowed)
    except NlipError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def wave_recon_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="wave-recon", description="Wave potential reconstruction with truth, reconstruction and error tables")
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    return main(["wave-recon", "--config", args.config] + (["--out", args.out] if args.out else []))


if __name__ == "__main__":
    sys.exit(main())
