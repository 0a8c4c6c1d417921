"""Command line front end for the benchmark harness.

Two subcommands:

  run     build a benchmark model, run the requested algorithm arms, and
          write results.json (plus per-arm trace CSVs with --save-traces)
          into the output directory
  report  read results.json from a run directory, print the comparison
          table, and write table.csv, boxplot_data.csv, and report.json
          next to it

Exit status is 0 on success and 1 on configuration or I/O errors, with the
reason on stderr. Worker count comes from --workers if given, else the
ADAPTMCMC_WORKERS environment variable, else the CPU count.
"""

import argparse
import os
import sys

from .benchmarks import (ALGO_NAMES, MODEL_NAMES, WORKERS_ENV,
                         ComparisonResults, ExperimentConfig, boxplot_csv,
                         run_comparison)


def _build_run_parser(sub):
    p = sub.add_parser("run", help="run benchmark arms and save results")
    p.add_argument("--model", required=True, choices=MODEL_NAMES,
                   help="benchmark model to build")
    p.add_argument("--algo", default=",".join(ALGO_NAMES), metavar="LIST",
                   help="comma-separated algorithm arms (default: all of %s)"
                        % ",".join(ALGO_NAMES))
    p.add_argument("--reps", type=int, default=1, metavar="R",
                   help="independent replications per arm (default 1)")
    p.add_argument("--outer", type=int, default=None, metavar="M",
                   help="outer adaptation iterations (default: desk preset)")
    p.add_argument("--inner", type=int, default=None, metavar="N",
                   help="sweeps per outer iteration (default: desk preset)")
    p.add_argument("--seed", type=int, default=0, metavar="S",
                   help="seed base; arm i uses seed S+i (default 0)")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory (created if missing)")
    p.add_argument("--size", type=int, default=None,
                   help="model size knob: litters per group, subjects, or "
                        "sites (default: desk preset)")
    p.add_argument("--final", type=int, default=None, metavar="N_FINAL",
                   help="length of the frozen-kernel efficiency run "
                        "(default 50000)")
    p.add_argument("--warm", type=int, default=None, metavar="N_WARM",
                   help="unmeasured burn-in sweeps before each arm "
                        "(default: one inner segment)")
    p.add_argument("--target", type=int, default=10000, metavar="E",
                   help="effective-sample target for the time-to-E column")
    p.add_argument("--time-source", choices=("cost", "wall"), default="cost",
                   help="clock for efficiency: deterministic evaluation "
                        "cost or wall seconds (default cost)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel arm workers (default: $%s or CPU count)"
                        % WORKERS_ENV)
    p.add_argument("--save-traces", action="store_true",
                   help="also write the final-run trace of each arm as CSV")


def _build_report_parser(sub):
    p = sub.add_parser("report", help="render table and plot data from a run")
    p.add_argument("--in", dest="in_dir", required=True, metavar="DIR",
                   help="directory holding results.json from a run")


def _config_from_args(args):
    kw = dict(model=args.model, reps=args.reps, seed_base=args.seed,
              e_target=args.target, time_source=args.time_source,
              workers=args.workers, save_traces=args.save_traces)
    kw["algorithms"] = tuple(
        a.strip() for a in args.algo.split(",") if a.strip())
    if args.size is not None:
        kw["size"] = args.size
    if args.outer is not None:
        kw["max_outer"] = args.outer
    if args.inner is not None:
        kw["n_inner"] = args.inner
    if args.final is not None:
        kw["n_final"] = args.final
    if args.warm is not None:
        kw["n_warm"] = args.warm
    return ExperimentConfig(**kw)


def _cmd_run(args):
    config = _config_from_args(args)
    results = run_comparison(config, out_dir=args.out)
    print(results.table.to_text())
    print(f"results written to {os.path.join(args.out, 'results.json')}")
    return 0


def _cmd_report(args):
    path = os.path.join(args.in_dir, "results.json")
    with open(path) as f:
        results = ComparisonResults.from_json(f.read())
    print(results.table.to_text())
    outputs = {
        "table.csv": results.table.to_csv(),
        "boxplot_data.csv": boxplot_csv(results.arms),
        "report.json": results.to_json(),
    }
    for name, text in outputs.items():
        with open(os.path.join(args.in_dir, name), "w") as f:
            f.write(text)
    print(f"wrote {', '.join(outputs)} to {args.in_dir}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="adaptmcmc",
        description="adaptive MCMC benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    _build_run_parser(sub)
    _build_report_parser(sub)
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
