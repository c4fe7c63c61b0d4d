"""Command-line entry point ``bartint``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError
from .harness import (emit_report, load_records, load_suite, output_root, run_experiment,
                      runtime_benchmark, synth_survey_pool)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _suite_args(p):
    p.add_argument("config", help="YAML config path or the name of a shipped config")
    p.add_argument("--seed", type=int, help="base seed; overrides the config")
    p.add_argument("--reps", type=int, help="number of repetitions")
    p.add_argument("--paper-scale", action="store_true", help="apply the config's paper_scale block")
    p.add_argument("--methods", nargs="+", choices=["bart_int", "gp_bq", "mc"])
    p.add_argument("--families", nargs="+", help="Genz families to run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bartint", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--out", type=Path, help="output directory (default: $BARTINT_OUTPUT)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    _suite_args(run)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--no-report", action="store_true")

    rep = sub.add_parser("report", help="summarise result records in a directory")
    rep.add_argument("directory", type=Path)

    bench = sub.add_parser("bench-runtime", help="time BART-Int and GP-BQ fits")
    _suite_args(bench)

    synth = sub.add_parser("synth-pool", help="write the synthetic survey pool CSV")
    synth.add_argument("--n-pool", type=int, default=20000)
    synth.add_argument("--schema-seed", type=int, default=0)
    synth.add_argument("--path", type=Path, required=True)

    val = sub.add_parser("validate", help="check a config without running it")
    _suite_args(val)
    return parser


def _suite(args):
    return load_suite(args.config, seed=args.seed, reps=args.reps, paper_scale=args.paper_scale,
                      methods=args.methods, families=args.families)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or output_root()
    try:
        if args.command == "validate":
            cfgs = _suite(args)
            for cfg in cfgs:
                print(f"ok {cfg.tag} {cfg.method} reps={cfg.reps} hash={cfg.config_hash()}")
            return EXIT_OK
        if args.command == "synth-pool":
            frame = synth_survey_pool(args.n_pool, args.schema_seed, args.path)
            print(f"wrote {len(frame)} rows to {args.path}")
            return EXIT_OK
        if args.command == "report":
            paths = emit_report(load_records(args.directory), args.directory)
            for p in paths["csv"] + paths["svg"]:
                print(p)
            return EXIT_OK
        cfgs = _suite(args)
        if args.command == "bench-runtime":
            for cfg in cfgs:
                rec = runtime_benchmark(cfg, out)
                for row in rec["rows"]:
                    print(f"{row['method']:8s} n={row['n']:6d} {row['seconds']:9.3f}s")
            return EXIT_OK
        records, failed = [], False
        for cfg in cfgs:
            rec = run_experiment(cfg, out, workers=args.workers)
            records.append(rec)
            mape = "nan" if rec.mape is None else f"{rec.mape:.3e}"
            print(f"{rec.tag:24s} {rec.method:8s} MAPE={mape} failures={len(rec.failures)}")
            failed |= bool(rec.failures)
        if not args.no_report:
            emit_report(load_records(out), out)
        return EXIT_RUNTIME if failed else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        logging.getLogger(__name__).debug("failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
