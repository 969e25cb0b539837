"""Command-line interface.

Subcommands::

    blindinv train-gan <config.json>    train and checkpoint the prior
    blindinv observe <config.json>      synthesize an observation set
    blindinv solve <config.json>        run the solver (+ configured baselines)
    blindinv baseline <method> <config> run one baseline
    blindinv evaluate <result-dir>      recompute metrics from payloads
    blindinv gradcheck                  run the autodiff property suite

Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 numerical failure.
``--trials K`` repeats an experiment on derived seeds; ``--parallel``
runs those trials concurrently, capped by BLINDINV_THREADS.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .errors import ConfigError, FormatError, NumericalError
from .experiment import (
    CSV_COLUMNS,
    ExperimentConfig,
    evaluate_command,
    observe_command,
    run_experiment,
    train_gan_command,
)
from .gradcheck import DEFAULT_TOL, run_suite
from .rng import splitmix64

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

_METHOD_ALIASES = {
    "pgd": "pgd",
    "pgd-known": "pgd_known",
    "pgd_known": "pgd_known",
    "wiener": "wiener",
    "naive-additive": "naive_additive",
    "naive_additive": "naive_additive",
    "ica": "ica",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blindinv",
        description="Blind joint recovery of sources and measurement processes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-gan", help="train the generative prior")
    p.add_argument("config")

    p = sub.add_parser("observe", help="synthesize and store an observation set")
    p.add_argument("config")

    p = sub.add_parser("solve", help="run the solver plus configured baselines")
    p.add_argument("config")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--parallel", action="store_true")

    p = sub.add_parser("baseline", help="run a single baseline method")
    p.add_argument("method", choices=sorted(_METHOD_ALIASES))
    p.add_argument("config")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--parallel", action="store_true")

    p = sub.add_parser("evaluate", help="recompute metrics for a result directory")
    p.add_argument("result_dir")

    p = sub.add_parser("gradcheck", help="run randomized gradient verification")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _dispatch(args) -> int:
    if args.command == "train-gan":
        return train_gan_command(ExperimentConfig.from_json(args.config))
    if args.command == "observe":
        return observe_command(ExperimentConfig.from_json(args.config))
    if args.command == "solve":
        return _run_trials(args.config, None, args.trials, args.parallel)
    if args.command == "baseline":
        method = _METHOD_ALIASES[args.method]
        return _run_trials(args.config, [method], args.trials, args.parallel)
    if args.command == "evaluate":
        return evaluate_command(args.result_dir)
    if args.command == "gradcheck":
        return _gradcheck(args.trials, args.seed, args.tol)
    raise ConfigError(f"unknown command {args.command!r}")


def _run_trials(config_path, methods, trials, parallel) -> int:
    base = ExperimentConfig.from_json(config_path)
    if trials <= 1:
        return run_experiment(base, methods)
    configs = [
        replace(
            base,
            seed=splitmix64(base.seed + i),
            output_dir=os.path.join(base.output_dir, f"trial{i:03d}"),
        )
        for i in range(trials)
    ]
    if parallel:
        workers = int(os.environ.get("BLINDINV_THREADS", "0") or 0)
        if workers <= 0:
            workers = min(trials, os.cpu_count() or 1)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(lambda c: run_experiment(c, methods), configs))
    else:
        codes = [run_experiment(c, methods) for c in configs]
    _merge_trial_csvs(base.output_dir, len(configs))
    return max(codes)


def _merge_trial_csvs(output_dir, trials) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for i in range(trials):
        path = os.path.join(output_dir, f"trial{i:03d}", "metrics.csv")
        with open(path) as fh:
            lines.extend(fh.read().splitlines()[1:])
    with open(os.path.join(output_dir, "metrics.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _gradcheck(trials, seed, tol) -> int:
    errors = run_suite(trials=trials, seed=seed)
    worst = 0.0
    for name in sorted(errors):
        status = "ok" if errors[name] < tol else "FAIL"
        print(f"{name:<22s} max_rel_err={errors[name]:.3e}  {status}")
        worst = max(worst, errors[name])
    return EXIT_OK if worst < tol else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
