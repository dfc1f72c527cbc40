"""Batch command line: measurements, sweeps, oracle checks and calculators.

Exit codes: 0 ok, 1 usage or parameter error, 2 data error, 3 infeasible.
Reports are JSON documents with a ``schema_version`` field; sweeps are CSV.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import oracle as oracle_mod
from . import search_l2, search_linf
from .data import Dataset, SplitSpec, derive_seed, gen_gaussian, gen_uniform_cube, load_any, load_cifar_binary, split
from .errors import ConcentrationError, FormatError, InsufficientPointsError, ParameterError, ParseError
from .metric_index import Metric, cache_dir, cached_knn_table
from .regions import region_to_dict
from .theory import (
    ConcentrationEstimate,
    PenaltyParams,
    eps_convert,
    generalization_certificate,
    intrinsic_robustness,
)

REPORT_SCHEMA = 1

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3

ASSUMPTION = (
    "inputs are treated as samples from an admissible metric probability space; "
    "continuity of the concentration function in alpha is assumed, not tested"
)

# argparse destinations echoed into reports; rerunning with them reproduces the report
ECHO_KEYS = (
    "metric", "alpha", "epsilon", "T", "k_density", "delta_bin", "kmeans_iters", "restarts",
    "seed", "data", "format", "train", "test", "train_fraction", "synthetic", "n", "m", "sigma",
    "delta", "center_sample",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- data


def _load_paths(paths, fmt: str) -> Dataset:
    paths = [Path(p) for p in paths]
    if fmt == "cifar" or (fmt == "auto" and all(p.name.lower().endswith(".bin") for p in paths)):
        return load_cifar_binary(paths)
    parts = [load_any(p, fmt) for p in paths]
    if len(parts) == 1:
        return parts[0]
    if len({d.n for d in parts}) != 1:
        raise FormatError("input files disagree on dimension")
    return Dataset(np.concatenate([d.points for d in parts]), "+".join(d.source_tag for d in parts))


def _synthetic(args, key: str = "data") -> Dataset:
    if args.n is None or args.m is None:
        raise UsageError("--synthetic needs --n and --m")
    seed = derive_seed(args.seed, key)
    if args.synthetic == "uniform":
        return gen_uniform_cube(args.n, args.m, seed)
    return gen_gaussian(args.n, args.m, args.sigma, seed)


def _single_source(args) -> Dataset:
    sources = [bool(args.data), bool(args.synthetic), bool(args.train or args.test)]
    if sum(sources) != 1:
        raise UsageError("give exactly one of --data, --synthetic or --train/--test")
    if args.data:
        return _load_paths(args.data, args.format)
    if args.synthetic:
        return _synthetic(args)
    raise UsageError("this command takes one dataset (--data or --synthetic)")


def _train_test(args) -> tuple[Dataset, Dataset]:
    if args.train or args.test:
        if not (args.train and args.test) or args.data or args.synthetic:
            raise UsageError("--train and --test go together and exclude --data/--synthetic")
        return _load_paths(args.train, args.format), _load_paths(args.test, args.format)
    ds = _single_source(args)
    if args.synthetic:
        # a generator can supply a fresh test sample, so none is held out
        return ds, _synthetic(args, "test")
    return split(ds, SplitSpec(args.train_fraction, derive_seed(args.seed, "split")))


def _describe(ds: Dataset) -> dict:
    return {"source": ds.source_tag, "m": ds.m, "n": ds.n, "sha256": ds.content_hash()}


# --------------------------------------------------------------------------- searches


def _metric(args) -> Metric:
    metric = Metric.parse(args.metric)
    if metric == Metric.L1:
        raise UsageError("--metric must be linf or l2")
    if args.family_flag == "rects" and metric != Metric.LINF:
        raise UsageError("--rects pairs with --metric linf")
    if args.family_flag == "balls" and metric != Metric.L2:
        raise UsageError("--balls pairs with --metric l2")
    return metric


def _need_T(args) -> int:
    if args.T is None:
        raise UsageError("the number of primitives is required (--rects, --balls or --T)")
    return args.T


def _linf_config(args, T) -> search_linf.LinfConfig:
    return search_linf.LinfConfig(
        alpha=args.alpha, epsilon_inf=args.epsilon, T=T, k_density=args.k_density,
        delta_bin=args.delta_bin, kmeans_iters=args.kmeans_iters, restarts=args.restarts, seed=args.seed,
    )


def _l2_config(args, T) -> search_l2.L2Config:
    return search_l2.L2Config(
        alpha=args.alpha, epsilon_2=args.epsilon, T=T, seed=args.seed, center_sample=args.center_sample
    )


def estimate(train: Dataset, test: Dataset, args, T: int) -> ConcentrationEstimate:
    """Run the search selected by ``args.metric`` and fold it into one estimate."""
    if _metric(args) == Metric.LINF:
        res = search_linf.run(train, test, _linf_config(args, T), threads=args.threads)
        return ConcentrationEstimate(
            alpha=args.alpha, epsilon=args.epsilon, metric=Metric.LINF.value, T=T,
            risk_train=res.risk_train, advrisk_train=res.advrisk_train,
            risk_test=res.risk_test, advrisk_test=res.advrisk_test,
            region=res.region, restart_stats=res.restart_stats, feasible=res.feasible,
            details={"best_q": res.best_q},
        )
    est = search_l2.run(train, test, _l2_config(args, T), threads=args.threads)
    est.feasible = est.risk_train >= args.alpha
    return est


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def build_report(args, train: Dataset, test: Dataset, est: ConcentrationEstimate) -> dict:
    cert = generalization_certificate(
        est.advrisk_train, PenaltyParams(train.n, est.T, max(train.m, 2), args.delta)
    )
    return _clean({
        "schema_version": REPORT_SCHEMA,
        "tool_version": __version__,
        "command": "measure",
        "config": {k: getattr(args, k) for k in ECHO_KEYS},
        "assumptions": ASSUMPTION,
        "data": {"train": _describe(train), "test": _describe(test)},
        "estimate": {
            "alpha": est.alpha,
            "epsilon": est.epsilon,
            "metric": est.metric,
            "T": est.T,
            "feasible": est.feasible,
            "train": {"risk": est.risk_train, "advrisk": est.advrisk_train},
            "test": {"risk": est.risk_test, "advrisk": est.advrisk_test},
            "details": est.details,
        },
        "region": region_to_dict(est.region),
        "restart_stats": est.restart_stats or None,
        "certificate": {
            "h_empirical": cert.h_empirical,
            "delta": cert.delta,
            "penalty": cert.penalty,
            "confidence": cert.confidence,
            "statement": cert.statement,
        },
        "intrinsic_robustness": {
            "train": intrinsic_robustness(est.advrisk_train),
            "test": intrinsic_robustness(est.advrisk_test),
            "note": "upper estimate over classifiers whose risk is at least alpha",
        },
    })


def dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text: str, output) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------- commands


def cmd_measure(args) -> int:
    T = _need_T(args)
    _metric(args)
    train, test = _train_test(args)
    est = estimate(train, test, args, T)
    report = build_report(args, train, test, est)
    _emit(dump_json(report), args.output)
    if args.trace:
        if est.metric == Metric.L2.value:
            search_l2.write_trace(est.details["trace"], args.trace)
        else:
            raise UsageError("--trace is available for --metric l2 only")
    if not est.feasible:
        print("infeasible: no region reached risk >= alpha", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _write_rows(header, rows, output) -> None:
    fh = open(output, "w", newline="") if output else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    finally:
        if output:
            fh.close()


def cmd_sweep_q(args) -> int:
    T = _need_T(args)
    if _metric(args) != Metric.LINF:
        raise UsageError("sweep-q applies to --metric linf")
    train, _ = _train_test(args)
    probes = search_linf.sweep_q(train, _linf_config(args, T))
    rows = [(p.q, int(p.feasible), p.risk, p.advrisk) for p in probes]
    _write_rows(["q", "feasible", "risk", "advrisk"], rows, args.output)
    return EXIT_OK


def cmd_sweep_T(args) -> int:
    _metric(args)
    try:
        T_list = [int(t) for t in args.T_list.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --T-list: {exc}") from None
    if not T_list:
        raise UsageError("--T-list is empty")
    train, test = _train_test(args)
    rows = []
    for T in T_list:
        est = estimate(train, test, args, T)
        rows.append((T, int(est.feasible), est.risk_train, est.advrisk_train, est.risk_test, est.advrisk_test))
    header = ["T", "feasible", "risk_train", "advrisk_train", "risk_test", "advrisk_test"]
    _write_rows(header, rows, args.output)
    return EXIT_OK


def cmd_bound(args) -> int:
    p = PenaltyParams(args.n, args.T, args.m, args.delta)
    cert = generalization_certificate(args.h, p)
    print(cert.statement)
    print(dump_json({
        "n": p.n, "T": p.T, "m": p.m, "delta": p.delta, "h_empirical": cert.h_empirical,
        "penalty": cert.penalty, "confidence": cert.confidence,
    }), end="")
    return EXIT_OK


def cmd_convert(args) -> int:
    value = eps_convert(args.n, args.eps_inf)
    print(f"eps_2 = {value:.4f}  (n={args.n}, eps_inf={args.eps_inf:g})")
    print(dump_json({"n": args.n, "eps_inf": args.eps_inf, "eps_2": value}), end="")
    return EXIT_OK


def cmd_oracle(args) -> int:
    T = _need_T(args)
    ds = _single_source(args)
    if args.family == "balls":
        res = oracle_mod.brute_force_balls(ds, args.alpha, args.epsilon, T)
    else:
        res = oracle_mod.brute_force_rects(ds, args.alpha, args.epsilon, T)
    doc = _clean({
        "schema_version": REPORT_SCHEMA,
        "tool_version": __version__,
        "command": "oracle",
        "config": {"family": args.family, "alpha": args.alpha, "epsilon": args.epsilon, "T": T},
        "data": _describe(ds),
        "feasible": res.feasible,
        "optimal_advrisk": res.optimal_advrisk,
        "optimal_risk": res.optimal_risk,
        "candidates_examined": res.candidates_examined,
        "region": region_to_dict(res.optimal_region) if res.optimal_region is not None else None,
        "details": res.details,
    })
    _emit(dump_json(doc), args.output)
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_knn_cache(args) -> int:
    directory = Path(args.cache_dir) if args.cache_dir else cache_dir()
    if directory is None:
        raise UsageError("set CONC_CACHE_DIR or pass --cache-dir")
    directory.mkdir(parents=True, exist_ok=True)
    ds = _single_source(args)
    metric = Metric.parse(args.metric)
    cached_knn_table(ds, args.k, metric, directory)
    print(directory / f"{ds.content_hash()[:32]}-{metric.value}-k{args.k}.knn")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _add_data(p, split_flags=True):
    g = p.add_argument_group("data")
    g.add_argument("--data", nargs="+", help="input file(s): IDX (optionally gzipped), CIFAR .bin or CSV")
    g.add_argument("--format", default="auto", choices=["auto", "idx", "cifar", "csv"])
    g.add_argument("--synthetic", choices=["uniform", "gaussian"], help="generate data instead of loading")
    g.add_argument("--n", type=int, help="synthetic dimension")
    g.add_argument("--m", type=int, help="synthetic sample count; measure runs also draw an independent test set of this size")
    g.add_argument("--sigma", type=float, default=1.0, help="synthetic gaussian scale")
    g.add_argument("--seed", type=int, default=0, help="master seed for data, split and search")
    if split_flags:
        g.add_argument("--train", nargs="+", help="explicit training file(s)")
        g.add_argument("--test", nargs="+", help="explicit test file(s)")
        g.add_argument("--train-fraction", type=float, default=0.5, help="train share when splitting --data")
    else:
        p.set_defaults(train=None, test=None, train_fraction=0.5)


def _add_search(p, with_T=True):
    g = p.add_argument_group("search")
    g.add_argument("--metric", default="linf", help="linf (box complements) or l2 (ball unions)")
    g.add_argument("--alpha", type=float, required=True, help="risk target")
    g.add_argument("--epsilon", type=float, required=True, help="perturbation budget in the chosen metric")
    p.set_defaults(family_flag=None, T=None)
    if with_T:
        t = g.add_mutually_exclusive_group()
        t.add_argument("--rects", type=int, dest="T", help="number of boxes (l-inf)")
        t.add_argument("--balls", type=int, dest="T", help="number of balls (l2)")
        t.add_argument("--T", type=int, dest="T", help="number of primitives")
    g.add_argument("--k-density", type=int, default=50)
    g.add_argument("--delta-bin", type=float, default=0.005)
    g.add_argument("--kmeans-iters", type=int, default=30)
    g.add_argument("--restarts", type=int, default=10)
    g.add_argument("--center-sample", type=int, help="l2 only: scan a seeded subset of centers")
    g.add_argument("--delta", type=float, default=0.05, help="deviation for the generalization certificate")
    g.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="concmeasure", description="Empirical concentration-of-measure estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("measure", help="estimate concentration and write a JSON report")
    _add_data(p)
    _add_search(p)
    p.add_argument("--config", help="JSON report (or bare config) whose settings become the defaults")
    p.add_argument("--output", help="report path (default: stdout)")
    p.add_argument("--trace", help="l2 only: CSV of the greedy steps")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("sweep-q", help="risk and advrisk over the even q grid (l-inf)")
    _add_data(p)
    _add_search(p)
    p.add_argument("--output", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_sweep_q)

    p = sub.add_parser("sweep-T", help="full search for each T in a list")
    _add_data(p)
    _add_search(p, with_T=False)
    p.add_argument("--T-list", required=True, help="comma-separated values, e.g. 1,5,10")
    p.add_argument("--output", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_sweep_T)

    p = sub.add_parser("bound", help="generalization certificate for (n, T, m, delta)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--h", type=float, default=0.0, help="empirical concentration to bracket")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("convert", help="l-inf budget to the volume-matched l2 budget")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps-inf", type=float, required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("oracle", help="exhaustive optimum on a tiny dataset")
    _add_data(p, split_flags=False)
    p.add_argument("--family", choices=["balls", "rects"], required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--T", type=int, default=1)
    p.add_argument("--output", help="report path (default: stdout)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("knn-cache", help="precompute the k-NN table used for density ranking")
    _add_data(p, split_flags=False)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--metric", default="l1")
    p.add_argument("--cache-dir", help="default: $CONC_CACHE_DIR")
    p.set_defaults(func=cmd_knn_cache)
    return parser


def _config_defaults(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from None
    cfg = doc.get("config", doc) if isinstance(doc, dict) else None
    if not isinstance(cfg, dict):
        raise FormatError(f"{path} holds no config object")
    unknown = set(cfg) - set(ECHO_KEYS)
    if unknown:
        raise FormatError(f"unknown config keys {sorted(unknown)}")
    return cfg


def _config_path(argv):
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def parse_args(argv):
    parser = make_parser()
    path = _config_path(argv) if argv and argv[0] == "measure" else None
    if path:
        # loaded values become defaults, so explicit flags still override them
        defaults = _config_defaults(path)
        measure = parser._subparsers._group_actions[0].choices["measure"]
        for action in measure._actions:
            if action.dest in defaults:
                action.required = False
        measure.set_defaults(**defaults)
    return parser.parse_args(argv)


def _family_flag(argv) -> str | None:
    for token in argv:
        if token == "--rects" or token.startswith("--rects="):
            return "rects"
        if token == "--balls" or token.startswith("--balls="):
            return "balls"
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = parse_args(argv)
        except SystemExit as exc:
            # argparse exits on usage errors and on --help/--version
            return EXIT_USAGE if exc.code else EXIT_OK
        args.family_flag = _family_flag(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"concmeasure: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientPointsError as exc:
        print(f"concmeasure: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ParameterError as exc:
        print(f"concmeasure: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ParseError, OSError) as exc:
        print(f"concmeasure: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConcentrationError as exc:
        print(f"concmeasure: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
