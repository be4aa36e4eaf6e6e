"""Command-line entry point: ``symquant <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import List, Optional

import numpy as np

from ..core import PrevalenceError
from ..sampling import BadSpec, MissingClass
from .benchmark import (ConfigError, ExperimentConfig, MethodSpec, ResultTable, bins_sweep,
                        build_method, evaluate, fit_method, quantify_parallel, run_benchmark)
from .io import DataError, generate_bags_cmd, load_bags, write_prevalences
from .report import markdown_text, report, sweep_csv_text
from .serialize import SchemaError, load_model, save_model
from .toy import TARGETS, ToyConfig, toy_histogram_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_options(pairs: Optional[List[str]]) -> dict:
    """``["lr=0.1", "head_sizes=[32,16]"]`` -> ``{"lr": 0.1, "head_sizes": [32, 16]}``."""
    out = {}
    for item in pairs or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"option {item!r} is not KEY=VALUE")
        out[key.strip()] = _parse_value(val)
    return out


def load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def experiment_from_args(args, methods: Optional[List[str]] = None) -> ExperimentConfig:
    """Merge the ``--config`` file with command-line flags (flags win)."""
    cfg = load_config_file(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if getattr(args, "data", None):
        cfg["lequa_dir"] = args.data
        cfg.pop("synthetic", None)
    if getattr(args, "manifest", None):
        cfg["manifest"] = args.manifest
    if getattr(args, "preset", None):
        cfg["preset"] = args.preset
    opts = parse_options(getattr(args, "option", None))
    if methods:
        cfg["methods"] = [MethodSpec(m, dict(opts)) for m in methods]
    elif opts:
        cfg["methods"] = [MethodSpec(**m) if isinstance(m, dict) else MethodSpec(m)
                          for m in cfg.get("methods", [])]
        for m in cfg["methods"]:
            m.options.update(opts)
    cfg.setdefault("methods", [])
    return ExperimentConfig.from_dict(cfg)


# -- subcommands ---------------------------------------------------------------------------

def cmd_gen_bags(args) -> int:
    seed = 0 if args.seed is None else args.seed
    bags = generate_bags_cmd(args.dataset, args.bag_size, args.count, seed, args.out, args.prefix)
    print(f"wrote {len(bags)} bags of {args.bag_size} instances to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = experiment_from_args(args, [args.method] if args.method else None)
    if len(cfg.methods) != 1:
        raise ConfigError("train needs exactly one method (--method or config 'methods')")
    data = cfg.load_data()
    model = build_method(cfg.methods[0], cfg.seed, cfg.preset)
    t0 = time.perf_counter()
    fit_method(model, data, args.verbose)
    save_model(model, args.out)
    print(f"trained {cfg.methods[0].name} in {time.perf_counter() - t0:.1f}s -> {args.out}")
    return EXIT_OK


def cmd_quantify(args) -> int:
    try:
        model = load_model(args.model)
    except FileNotFoundError:
        raise DataError(f"missing model file {args.model}") from None
    n_classes = _model_classes(model)
    bags = load_bags(args.samples, "", n_classes, required=False)
    threads = args.threads or 1
    est = quantify_parallel(model, bags.bags, threads)
    if args.out:
        write_prevalences(args.out, bags.ids, est)
    else:
        for i, p in zip(bags.ids, est):
            print(",".join([str(i)] + [repr(float(v)) for v in p]))
    return EXIT_OK


def _model_classes(model) -> int:
    net = getattr(model, "net", None)
    if net is not None:
        return net.cfg.n_classes
    return model.classifier.n_classes


def cmd_evaluate(args) -> int:
    if args.model:
        models = []
        for path in args.model:
            try:
                models.append(load_model(path))
            except FileNotFoundError:
                raise DataError(f"missing model file {path}") from None
        cfg = experiment_from_args(args, [m.name for m in models])
        data = cfg.load_data()
        table = ResultTable(cfg.metrics)
        for model in models:
            est, errs = evaluate(model, data.test, cfg.metrics, cfg.threads)
            table.add(model.name, data.test.ids, errs, est)
    else:
        cfg = experiment_from_args(args, args.methods)
        if not cfg.methods:
            raise ConfigError("no methods given (--methods, --model or config 'methods')")
        table = run_benchmark(cfg, verbose=args.verbose)
    out = args.out or cfg.output
    if out:
        report(table, args.format, out)
        if args.format == "csv":
            report(table, "markdown", os.path.splitext(out)[0] + ".md")
    if table.methods:
        print(markdown_text(table), end="")
    for m, tb in table.failures.items():
        print(f"method {m} failed:\n{tb}", file=sys.stderr)
    return EXIT_RUNTIME if table.failures and not table.methods else EXIT_OK


def cmd_toy_hist(args) -> int:
    targets = TARGETS if args.target == "all" else (args.target,)
    cfg = ToyConfig(steps=args.steps, variant=args.variant)
    base = 0 if args.seed is None else args.seed
    rows = []
    for t in targets:
        aes = []
        for s in range(args.seeds):
            t0 = time.perf_counter()
            aes.append(toy_histogram_experiment(t, base + s, cfg))
            print(f"{t:6s} seed {base + s}: AE {aes[-1]:.5f} ({time.perf_counter() - t0:.1f}s)")
        rows.append((t, float(np.mean(aes))))
        print(f"{t:6s} mean AE over {args.seeds} seeds: {rows[-1][1]:.5f}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("target,mean_ae\n")
            fh.writelines(f"{t},{ae!r}\n" for t, ae in rows)
    return EXIT_OK


def cmd_bins_sweep(args) -> int:
    method = args.method
    if method is None and not load_config_file(args.config).get("methods"):
        method = "HistNetQ-hard"
    cfg = experiment_from_args(args, [method] if method else None)
    try:
        bins = [int(b) for b in args.bins.split(",") if b.strip()]
    except ValueError:
        raise ConfigError(f"--bins {args.bins!r} is not a list of integers") from None
    if not bins or min(bins) < 1:
        raise ConfigError("--bins must list positive integers")
    tables = bins_sweep(cfg, bins, verbose=args.verbose)
    text = sweep_csv_text(tables)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS keeps a subcommand's copy from overwriting a flag given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global random seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="evaluation worker threads")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")

    p = _Parser(prog="symquant", description="Class-prevalence estimation experiments.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-bags", parents=[common], help="draw APP bags from a labelled CSV")
    g.add_argument("dataset", help="CSV with rows label,f_0,...")
    g.add_argument("--bag-size", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--prefix", default="dev", help="writes <prefix>_samples/ and <prefix>_prevalences.csv")
    g.set_defaults(func=cmd_gen_bags)

    def data_flags(q):
        q.add_argument("--data", help="LeQua-layout directory (default: synthetic Gaussians)")
        q.add_argument("--manifest", help="JSON file mapping data roles to paths")
        q.add_argument("--preset", help="named hyperparameter preset for network methods")
        q.add_argument("--option", "-o", action="append", metavar="KEY=VALUE",
                       help="method option; value parsed as JSON when possible")
        q.add_argument("--verbose", "-v", action="store_true")

    t = sub.add_parser("train", parents=[common], help="fit one method and save it as JSON")
    t.add_argument("--method", help="e.g. PACC, EMQ-BCTS, HistNetQ-hard, DeepSets-avg")
    t.add_argument("--out", required=True, help="model JSON path")
    data_flags(t)
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("quantify", parents=[common], help="estimate prevalences of sample CSVs")
    q.add_argument("--model", required=True)
    q.add_argument("--samples", required=True, help="directory of <id>.csv bags")
    q.add_argument("--out", help="prevalence CSV (default: stdout)")
    q.set_defaults(func=cmd_quantify)

    e = sub.add_parser("evaluate", parents=[common], help="benchmark methods on test bags")
    e.add_argument("--methods", nargs="+", help="methods to fit and score")
    e.add_argument("--model", nargs="+", help="score saved models instead of fitting")
    e.add_argument("--out", help="report path")
    e.add_argument("--format", choices=("csv", "markdown"), default="csv")
    data_flags(e)
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("toy-hist", parents=[common], help="histogram-layer avg/median/max regression")
    h.add_argument("--target", choices=TARGETS + ("all",), default="all")
    h.add_argument("--seeds", type=int, default=3)
    h.add_argument("--steps", type=int, default=ToyConfig.steps)
    h.add_argument("--variant", default="hard")
    h.add_argument("--out", help="CSV of mean AE per target")
    h.set_defaults(func=cmd_toy_hist)

    b = sub.add_parser("bins-sweep", parents=[common], help="one histogram network per bin count")
    b.add_argument("--method", help="histogram method (default HistNetQ-hard)")
    b.add_argument("--bins", default="8,16,32,64", help="comma-separated bin counts")
    b.add_argument("--out", help="CSV of mean/std per bin count")
    data_flags(b)
    b.set_defaults(func=cmd_bins_sweep)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed", "threads", "config"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, BadSpec, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PrevalenceError, MissingClass, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
