"""Command line entry point: run, oracle, binarize."""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import RunConfig, run_experiment
from .core import ContractViolation
from .oracle import OptimalGreedyForest
from .stream import fit_binarization, read_dataset


def _run(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.output:
        cfg.output = args.output
    exp = run_experiment(cfg)
    print(exp.summary())
    if not cfg.output:
        sys.stdout.write(exp.csv_text())
    return 0


def _oracle(args) -> int:
    data = read_dataset(args.dataset)
    enc = fit_binarization(data)
    X = enc.transform(data.rows)
    model = OptimalGreedyForest(
        n_trees=args.trees, max_depth=args.max_depth, keep_fraction=args.keep_fraction, random_state=args.seed
    ).fit(X, data.labels, n_actions=data.n_actions)
    with open(args.out, "w") as fh:
        fh.write(model.policy_.to_json())
    acc = float((model.predict(X) == data.labels).mean())
    print(f"reference forest: {args.trees} tree(s), training classification rate {acc:.4f}")
    return 0


def _binarize(args) -> int:
    data = read_dataset(args.dataset)
    enc = fit_binarization(data)
    enc.save(args.out, names=data.names)
    print(f"{enc.n_features_out_} binary variables from {len(data.names)} columns")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="banditforest", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a regret experiment from a key = value config file")
    run.add_argument("--config", required=True)
    run.add_argument("--output", help="CSV path (overrides the config)")
    run.set_defaults(func=_run)

    oracle = sub.add_parser("oracle", help="build the full-information reference forest of a dataset")
    oracle.add_argument("--dataset", required=True)
    oracle.add_argument("--out", required=True)
    oracle.add_argument("--trees", type=int, default=1)
    oracle.add_argument("--max-depth", type=int, default=None)
    oracle.add_argument("--keep-fraction", type=float, default=1.0)
    oracle.add_argument("--seed", type=int, default=0)
    oracle.set_defaults(func=_oracle)

    binarize = sub.add_parser("binarize", help="fit quantile/one-hot binarization and save it to a text file")
    binarize.add_argument("--dataset", required=True)
    binarize.add_argument("--out", required=True)
    binarize.set_defaults(func=_binarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
