"""``kgtmm`` command line.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from kgtmm.errors import ConfigError, ContractViolation, DivergenceError
from kgtmm.harness.config import ALGORITHMS, load_config
from kgtmm.harness.experiment import compare_algorithms, default_out_dir, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgtmm", description="Decentralized minimax simulator with gradient tracking.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config file")
    common.add_argument("--out", help="output directory (default: $KGTMM_OUT, then io.out_dir)")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one experiment")
    sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    cmp_ = sub.add_parser("compare", parents=[common], help="compare algorithms on one setup")
    cmp_.add_argument("--algos", nargs="+", choices=ALGORITHMS, help="algorithms to compare (default: compare.algorithms)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(out_dir=args.out or default_out_dir(), seed=args.seed)
        if args.command == "run":
            outcome = run_experiment(cfg)
            print(outcome.trace_path)
            print(outcome.summary_path)
        elif args.command == "sweep":
            print(run_sweep(cfg, jobs=max(1, args.jobs)))
        else:
            algos = args.algos or cfg.algorithms or ("kgt_minimax", "local_sgda")
            print(compare_algorithms(cfg, algos))
    except (ConfigError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
