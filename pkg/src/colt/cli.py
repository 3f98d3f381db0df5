"""Command line entry point: ``python -m colt {run,plot,train,test}``.

Exit status is 0 on success, 1 for a bad config or input file and 2 when a
computation fails.  ``COLT_OUTPUT_DIR`` overrides the config's output
directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from colt.benchmarks import PerturbationSpec, perturbed_sampler, sample_joint
from colt.core import ColtModel, colt_test, colt_train
from colt.errors import ColtError, ConfigurationError
from colt.harness import (
    ExperimentConfig,
    ResultRow,
    data_seed,
    emit_csv,
    emit_power_svg,
    method_seed,
    read_csv,
    run_experiment,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _cmd_run(args):
    config = ExperimentConfig.load(args.config, fast=args.fast)
    out = Path(args.output) if args.output else config.resolved_output_dir()
    rows = run_experiment(config)
    csv_path = emit_csv(rows, out / "results.csv")
    print(f"wrote {csv_path}")
    if len(config.alphas) > 1:
        print(f"wrote {emit_power_svg(rows, out / 'power.svg')}")
    for r in rows:
        print(f"{r.method:10s} alpha={r.alpha:<6g} seed={r.seed} power={r.power:.3f}")
    if any(r.failed for r in rows):
        print("some cells failed (power=nan); see log", file=sys.stderr)


def _cmd_plot(args):
    try:
        rows = read_csv(args.results)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.results}: {exc}") from exc
    print(f"wrote {emit_power_svg(rows, args.out, title=args.title)}")


def _colt_method(config):
    methods = [m for m in config.methods if m in ("colt_full", "colt_id")]
    if not methods:
        raise ConfigurationError("config lists no CoLT method (colt_full or colt_id) to train")
    return methods[0]


def _cmd_train(args):
    config = ExperimentConfig.load(args.config, fast=args.fast)
    method = _colt_method(config)
    alpha = config.alphas[-1] if args.alpha is None else args.alpha
    seed = config.seeds[0]
    task = config.task.build()
    q = perturbed_sampler(task, PerturbationSpec(config.kind, alpha, config.epsilon_t))
    batch = sample_joint(task, q, config.n, config.k, data_seed(config, alpha, seed))
    cfg = replace(config.colt, seed=method_seed(config, method, alpha, seed))
    model = colt_train(batch, cfg, "full" if method == "colt_full" else "id")
    model.save(args.save)
    print(f"trained {method} on {config.kind} alpha={alpha:g}; final divergence {model.history[-1]:.6g}")
    print(f"wrote {args.save}")


def _cmd_test(args):
    config = ExperimentConfig.load(args.config, fast=args.fast)
    try:
        model = ColtModel.load(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"cannot load model {args.model}: {exc}") from exc
    task = config.task.build()
    rows = []
    for alpha in config.alphas:
        q = perturbed_sampler(task, PerturbationSpec(config.kind, alpha, config.epsilon_t))
        for seed in config.seeds:
            reports = [
                colt_test(sample_joint(task, q, config.n, config.k, data_seed(config, alpha, seed, b)), model)
                for b in range(config.eval_batches)
            ]
            power = sum(r.reject_at_05 for r in reports) / len(reports)
            rows.append(
                ResultRow(
                    model.method, task.family, config.kind, task.m, task.s, task.d, alpha, seed, power,
                    float(np.mean([r.statistic for r in reports])),
                    float(np.mean([r.p_value for r in reports])), 0.0,
                )
            )
            print(f"{model.method} alpha={alpha:<6g} seed={seed} power={power:.3f}")
    out = Path(args.output) if args.output else config.resolved_output_dir()
    print(f"wrote {emit_csv(rows, out / 'test_results.csv')}")


def build_parser():
    parser = argparse.ArgumentParser(prog="colt", description="Conditional localization tests for conditional samplers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per sweep cell")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a power / Type-I sweep and write results.csv (+ power.svg)")
    p.add_argument("config")
    p.add_argument("--fast", action="store_true", help="N=100, K=100, 50 eval batches")
    p.add_argument("--output", help="output directory (overrides config and environment)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("plot", help="draw power curves from a results CSV")
    p.add_argument("results")
    p.add_argument("out")
    p.add_argument("--title")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("train", help="train a CoLT model on one batch and save it")
    p.add_argument("config")
    p.add_argument("--save", required=True)
    p.add_argument("--alpha", type=float, help="perturbation strength (default: last alpha in config)")
    p.add_argument("--fast", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("test", help="evaluate a saved CoLT model over the config's alphas")
    p.add_argument("config")
    p.add_argument("--model", required=True)
    p.add_argument("--fast", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_test)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ColtError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
