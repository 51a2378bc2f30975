"""Command-line entry point: ``python -m mcgattack <verb> ...``.

Exit codes: 0 success, 2 configuration error, 3 oracle protocol error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, DataError, OracleProtocolError, OracleUnavailable
from .config import load_config, parse_value
from .experiment import (
    read_results,
    report_from_results,
    run_experiment,
    stage_meta_train,
    stage_pgd_corpus,
    stage_pretrain,
    stage_zoo_train,
    write_curve,
    write_table,
)
from .metrics import emit_curve

EXIT_CONFIG = 2
EXIT_ORACLE = 3


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def _cfg(args, extra=None):
    overrides = _overrides(args.set)
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    return load_config(args.config, overrides)


def cmd_zoo_train(args):
    cfg = _cfg(args, {"zoo.arch": args.arch, "zoo.epochs": args.epochs, "zoo.seed": args.seed})
    model = stage_zoo_train(cfg, args.out)
    print(json.dumps({"architecture": model.arch_id, "test_error": model.test_error}))


def cmd_pgd_corpus(args):
    cfg = _cfg(args, {"surrogate": args.surrogate})
    corpus = stage_pgd_corpus(cfg, args.out)
    print(json.dumps(corpus["meta"]))


def cmd_pretrain(args):
    cfg = _cfg(args, {"corpus": args.corpus})
    stage_pretrain(cfg, args.out)


def cmd_meta_train(args):
    cfg = _cfg(args, {"surrogate": args.surrogate, "generator": args.generator})
    stage_meta_train(cfg, args.out)


def cmd_attack(args):
    cfg = _cfg(args)
    report = run_experiment(cfg)
    print(json.dumps(report.summary()))


def cmd_report(args):
    report = report_from_results(args.results)
    summary = report.summary()
    print(json.dumps(summary))
    if args.table:
        write_table(args.table, [(args.method, report)])


def cmd_curve(args):
    rows = read_results(args.results)
    grid = [int(q) for q in args.grid.split(",")]
    curve = emit_curve(rows, grid)
    if args.out:
        write_curve(args.out, curve)
    else:
        sys.stdout.write("queries\tasr\n")
        for q, asr in curve:
            sys.stdout.write(f"{q}\t{asr:.4f}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcgattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="YAML/JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
        p.set_defaults(func=fn)
        return p

    p = add("zoo-train", cmd_zoo_train, "train a classifier checkpoint")
    p.add_argument("--arch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("pgd-corpus", cmd_pgd_corpus, "PGD perturbations of the training split")
    p.add_argument("--surrogate")
    p.add_argument("--out", required=True)

    p = add("pretrain", cmd_pretrain, "maximum-likelihood pre-training of the generator")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)

    p = add("meta-train", cmd_meta_train, "REPTILE meta-training against the surrogate")
    p.add_argument("--surrogate")
    p.add_argument("--generator")
    p.add_argument("--out", required=True)

    add("attack", cmd_attack, "run the evaluation protocol")

    p = sub.add_parser("report", help="recompute metrics from results.jsonl")
    p.add_argument("results")
    p.add_argument("--table")
    p.add_argument("--method", default="attack")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("curve", help="ASR@q table from results.jsonl")
    p.add_argument("results")
    p.add_argument("--grid", default="1,10,100,1000,10000")
    p.add_argument("--out")
    p.set_defaults(func=cmd_curve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleProtocolError, OracleUnavailable) as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    return 0


if __name__ == "__main__":
    sys.exit(main())
