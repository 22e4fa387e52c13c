"""``soundsieve`` command line.

    soundsieve <command> --config <file> [--dataset-root DIR --work-dir DIR
        --family dense|conv|mixed --machine-type T --seed N --threads N]

Flags override config-file values. Exit codes: 0 ok, 1 usage/config error,
2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, SoundsieveError
from .pipeline import COMMANDS, RunConfig, coerce, parse_config_file, run_pipeline

log = logging.getLogger("soundsieve")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="soundsieve", description="Autoencoder anomalous sound detection pipeline.")
    p.add_argument("command", choices=COMMANDS + ("make-fixture",))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--dataset-root")
    p.add_argument("--work-dir")
    p.add_argument("--family", dest="model_family", choices=("dense", "conv", "mixed"))
    p.add_argument("--machine-type", dest="machine_types", action="append",
                   help="restrict to this machine type (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--baseline", help="per-machine baseline AUC/pAUC CSV for the report")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_config(args) -> RunConfig:
    values = parse_config_file(args.config) if args.config else {}
    for key in ("dataset_root", "work_dir", "model_family", "machine_types", "seed", "threads",
                "max_epochs", "patience", "batch_size", "lr", "val_fraction", "baseline"):
        v = getattr(args, key)
        if v is not None:
            values[key] = coerce(key, v)
    return RunConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-fixture":
            from .fixtures import generate_corpus
            if not args.dataset_root:
                raise ConfigError("make-fixture needs --dataset-root")
            generate_corpus(args.dataset_root, seed=args.seed or 0)
            return 0
        config = make_config(args)
        result = run_pipeline(config, args.command)
        if args.command == "report":
            print(result[0], end="")
        return 0
    except SoundsieveError as exc:
        print(f"soundsieve {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"soundsieve {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
