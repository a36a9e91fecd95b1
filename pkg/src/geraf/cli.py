"""Command-line harness: gen, build, query, bench.

Exit status is 0 on success, 1 for usage errors and 2 for I/O or format
errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from . import datasets
from .autoconfig import ConfigInput, configure
from .bench import compute_ground_truth, evaluate, reports_to_csv, reports_to_gnuplot
from .build import build_forest, compute_variances
from .core import ForestParams, FormatError, UsageError
from .persist import load_forest, save_forest
from .search import QueryScratch, search

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_matrix(path):
    if os.fspath(path).endswith(".bvecs"):
        return datasets.read_bvecs(path)
    return datasets.read_fvecs(path)


def _load_queries(path, d):
    Q = _read_matrix(path)
    if Q.shape[0] == 0:
        raise UsageError(f"{path}: no query vectors")
    if Q.shape[1] != d:
        raise UsageError(f"{path}: queries have d={Q.shape[1]}, data has d={d}")
    return Q.astype(np.float64)


def _parse_eps_list(text):
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"bad --epsilon-list {text!r}") from None
    if not values:
        raise UsageError("--epsilon-list is empty")
    return values


def _add_forest_args(p):
    p.add_argument("--auto", action="store_true", help="choose m, t, p, c from the data")
    p.add_argument("-m", "--trees", type=int, dest="m")
    p.add_argument("-t", "--split-dims", type=int, dest="t")
    p.add_argument("-p", "--leaf-size", type=int, dest="p")
    p.add_argument("-c", "--checks", type=int, dest="c")
    p.add_argument("--rotation", action="store_true")
    p.add_argument("--perturb", action="store_true")
    p.add_argument("--shuffle", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON object of parameter overrides, applied last")
    p.add_argument("--jobs", type=int, help="build worker processes")


def _forest_params(args, dataset, variances, epsilon) -> ForestParams:
    if args.auto:
        base = configure(ConfigInput.from_variances(dataset.n, variances, epsilon))
    else:
        base = ForestParams(t=min(ForestParams.t, dataset.d), epsilon=epsilon)
    explicit = {key: getattr(args, key) for key in ("m", "t", "p", "c") if getattr(args, key) is not None}
    explicit.update(
        epsilon=epsilon, seed=args.seed, use_rotation=args.rotation,
        use_split_perturbation=args.perturb, use_shuffling=args.shuffle,
    )
    if args.config:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: {exc.msg}", offset=exc.pos) from None
        if not isinstance(overrides, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        unknown = set(overrides) - set(asdict(base))
        if unknown:
            raise UsageError(f"{args.config}: unknown parameters {sorted(unknown)}")
        explicit.update(overrides)
    try:
        params = replace(base, **explicit)
    except UsageError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid parameter: {exc}") from None
    params.check_against(dataset.d)
    return params


def _describe(params):
    return " ".join(f"{key}={value}" for key, value in asdict(params).items())


def cmd_gen(args, out):
    base_rng, query_rng = datasets.synthetic_rngs(args.seed)
    if args.kind == "sift":
        def make(n, rng):
            return datasets.sift_like_points(n, rng, d=args.d, seed=args.seed)
        write = datasets.write_bvecs
    else:
        points = datasets.sphere_points if args.kind == "sphere" else datasets.klein_points
        def make(n, rng):
            return points(n, args.d, rng)
        write = datasets.write_fvecs
    write(args.out, make(args.n, base_rng))
    print(f"wrote {args.n} x {args.d} {args.kind} points to {args.out}", file=out)
    if args.queries:
        if not args.query_out:
            raise UsageError("--queries needs --query-out")
        write(args.query_out, make(args.queries, query_rng))
        print(f"wrote {args.queries} queries to {args.query_out}", file=out)


def cmd_build(args, out):
    dataset = datasets.load_vectors(args.data)
    variances = compute_variances(dataset)
    params = _forest_params(args, dataset, variances, args.epsilon)
    t0 = time.perf_counter()
    forest = build_forest(dataset, params, n_jobs=args.jobs, variances=variances)
    elapsed = time.perf_counter() - t0
    print(_describe(params), file=out)
    print(f"built {forest.m} trees, {forest.total_leaves} leaves in {elapsed:.3f} s", file=out)
    if args.index_out:
        save_forest(forest, args.index_out)
        print(f"index written to {args.index_out}", file=out)


def cmd_query(args, out):
    dataset = datasets.load_vectors(args.data)
    forest = load_forest(args.index, dataset)
    Q = _load_queries(args.query_file, dataset.d)
    if args.k < 1:
        raise UsageError("-k must be >= 1")
    scratch = QueryScratch(forest, args.k)
    rows = []
    for qi, q in enumerate(Q):
        found = search(forest, q, args.k, args.c, args.epsilon, scratch)
        rows.extend((qi, rank, nb.index, float(np.sqrt(nb.sq_dist))) for rank, nb in enumerate(found))
    if args.format == "csv":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("query", "rank", "index", "distance"))
        writer.writerows((qi, rank, idx, repr(dist)) for qi, rank, idx, dist in rows)
    else:
        for qi, rank, idx, dist in rows:
            print(f"{qi} {rank} {idx} {dist!r}", file=out)


def cmd_bench(args, out):
    dataset = datasets.load_vectors(args.data)
    Q = _load_queries(args.queries, dataset.d)
    eps_list = _parse_eps_list(args.epsilon_list)
    if args.k < 1:
        raise UsageError("-k must be >= 1")
    variances = compute_variances(dataset)
    truth = compute_ground_truth(dataset, Q, k=args.k)
    name = args.name or os.path.splitext(os.path.basename(args.data))[0]

    # Forests depend on everything but epsilon and c, so rows that differ
    # only in those share one build.
    forests = {}
    rows = []
    for eps in eps_list:
        params = _forest_params(args, dataset, variances, eps)
        key = replace(params, epsilon=0.0, c=1)
        if key not in forests:
            t0 = time.perf_counter()
            forests[key] = (build_forest(dataset, params, n_jobs=args.jobs, variances=variances),
                            time.perf_counter() - t0)
        forest, build_s = forests[key]
        report = evaluate(forest, Q, truth, k=args.k, epsilon=eps, c=params.c, build_time=build_s)
        rows.append(report.csv_row(name, dataset.n, dataset.d))

    text = reports_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    if args.gnuplot:
        with open(args.gnuplot, "w") as fh:
            fh.write(reports_to_gnuplot(rows))


def build_parser():
    parser = _Parser(prog="geraf", description="Randomized k-d forest nearest neighbour search")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("kind", choices=("sphere", "klein", "sift"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--queries", type=int, default=0, help="also write this many queries")
    p.add_argument("--query-out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build a forest and optionally save it")
    p.add_argument("--data", required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--index-out")
    _add_forest_args(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="search a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query-file", required=True)
    p.add_argument("-k", type=int, default=1)
    p.add_argument("-c", type=int, help="leaf-check cap (default: from the index)")
    p.add_argument("--epsilon", type=float, help="default: from the index")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="miss rates and timings against exact search")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--epsilon-list", default="0")
    p.add_argument("-k", type=int, default=1)
    p.add_argument("--name", help="dataset label for the report")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--gnuplot", help="also write a whitespace-separated table here")
    _add_forest_args(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        args.func(args, out)
    except SystemExit as exc:
        # --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except FormatError as exc:
        print(f"geraf: format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"geraf: {exc}", file=sys.stderr)
        return EXIT_IO
    except UsageError as exc:
        print(f"geraf: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
