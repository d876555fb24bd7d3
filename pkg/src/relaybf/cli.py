"""Command-line interface: ``relaybf run``, ``relaybf verify`` and ``relaybf oracle``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .bench import ExperimentAborted, preset_names, resolve_spec, run_experiment, write_outputs


def _progress(stream):
    def report(done, total):
        if done == total or done % max(1, total // 20) == 0:
            print(f"  {done}/{total} trials", file=stream, flush=True)

    return report


def cmd_run(args) -> int:
    try:
        spec = resolve_spec(args.spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        spec.base_seed = args.seed
    if args.trials is not None:
        spec.n_trials = args.trials
    try:
        spec.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"running {spec.name}: {len(spec.points())} sweep points x {spec.n_trials} trials", file=sys.stderr)
    try:
        table = run_experiment(spec, threads=args.threads, progress=None if args.quiet else _progress(sys.stderr))
    except ExperimentAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 1
    csv_path, meta_path = write_outputs(table, args.out, spec.name)
    print(csv_path)
    print(meta_path)
    return 0


def _run_suite(runner, seed) -> int:
    results = runner(seed=seed)
    for r in results:
        print(r.line(), flush=True)
    failed = [r for r in results if r.status == "FAIL"]
    known = [r for r in results if r.status == "KNOWN-FAIL"]
    print(f"{len(results) - len(failed) - len(known)} passed, {len(failed)} failed, {len(known)} known deviations")
    return 1 if failed else 0


def cmd_verify(args) -> int:
    from .checks import run_verify

    return _run_suite(run_verify, args.seed)


def cmd_oracle(args) -> int:
    from .checks import run_oracle

    return _run_suite(run_oracle, args.seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relaybf", description="Robust relay beamforming experiments and self-checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run",
        help="run an experiment preset or spec file",
        description=f"Run an experiment. Presets: {', '.join(preset_names())}.",
    )
    run.add_argument("spec", help="preset name or path to a .toml/.json spec file")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--seed", type=int, help="override the base seed")
    run.add_argument("--trials", type=int, help="override the number of trials")
    run.add_argument("--threads", type=int, default=1, help="worker processes (default: 1)")
    run.add_argument("--quiet", action="store_true", help="no progress output")
    run.set_defaults(func=cmd_run)

    for name, func, text in (
        ("verify", cmd_verify, "run the invariant suite"),
        ("oracle", cmd_oracle, "run brute-force and grid cross-checks"),
    ):
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--seed", type=int, default=0, help="seed of the random instances (default: 0)")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run" and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
