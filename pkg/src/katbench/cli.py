"""Command line entry point: ``katbench run`` and ``katbench synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from katbench.data import dump_libsvm
from katbench.errors import KatbenchError
from katbench.harness import ExperimentConfig, format_summary, make_synthetic, run_experiment

# CLI flag -> ExperimentConfig field
_FLAGS = {
    "dataset": "dataset_path",
    "loss": "loss",
    "reg": "reg_kind",
    "beta": "beta",
    "lam": "lam",
    "solvers": "solvers",
    "budget": "budget_grads",
    "S": "S",
    "alpha": "alpha",
    "seed": "seed",
    "out": "output_path",
    "dim": "dim",
    "checkpoint": "checkpoint",
    "mu_floor": "mu_floor",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="katbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run solvers under a shared gradient budget")
    run.add_argument("--config", help="flat key = value experiment file")
    run.add_argument("--dataset", help="LIBSVM file or synthetic:<n>,<d>,<seed>")
    run.add_argument("--loss", choices=["squared_hinge", "least_squares"])
    run.add_argument("--reg", choices=["lsp", "tl1", "l1", "none"])
    run.add_argument("--beta", type=float)
    run.add_argument("--lambda", dest="lam", help="e.g. 0.01, 1/n, 0.1/n")
    run.add_argument("--solvers", help="comma list of katalyst,prox_svrg,prox_svrg_mb")
    run.add_argument("--budget", help="gradient budget, e.g. 8000 or 40n")
    run.add_argument("-S", "--stages", dest="S", type=int, help="Katalyst runs S+1 stages at most")
    run.add_argument("--alpha", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="CSV trace path")
    run.add_argument("--dim", type=int, help="override the feature dimension")
    run.add_argument("--checkpoint", help="trace spacing in gradients, e.g. 1n")
    run.add_argument("--mu-floor", dest="mu_floor", type=float)
    run.add_argument("--deterministic-time", action="store_true", help="write wall_ns as 0")
    run.add_argument("--summary-json", help="also write the summary as JSON")

    synth = sub.add_parser("synth", help="write a synthetic dataset in LIBSVM format")
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--d", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    values = {}
    if args.config:
        base = ExperimentConfig.from_file(args.config)
        values = {k: v for k, v in vars(base).items()}
    for flag, name in _FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            values[name] = val
    if args.deterministic_time:
        values["deterministic_time"] = True
    return ExperimentConfig.from_mapping(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            ds = make_synthetic(args.n, args.d, args.seed)
            with open(args.out, "w", encoding="utf-8") as fh:
                dump_libsvm(ds, fh)
            return 0
        cfg = _config_from_args(args)
        summary = run_experiment(cfg)
    except (KatbenchError, OSError, ValueError) as err:
        print(f"katbench: error: {err}", file=sys.stderr)
        return 2
    print(format_summary(summary))
    if args.summary_json:
        payload = {k: v for k, v in summary.items() if k != "trace"}
        with open(args.summary_json, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
