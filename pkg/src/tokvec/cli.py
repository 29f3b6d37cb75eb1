"""Command-line interface.

Subcommands: gen-data, train-codebook, build-index, search, evaluate,
serve. Successful commands print a one-line JSON summary (or the search
response) on stdout; failures print {"error": ...} on stderr and exit 1;
usage mistakes exit 2 with argparse's usage text. The TOKVEC_LOG
environment variable sets the log level (DEBUG, INFO, WARNING, ...).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .corpus import CORPUS_FORMATS, load_corpus, save_corpus
from .encoders import RoundingEncoder, SubvectorClusteringEncoder, load_codebook, save_codebook
from .errors import TokvecError
from .evaluate import (
    LATENCY_STATS,
    emit_report,
    make_gaussian_mixture,
    pareto_frontier,
    run_grid,
    sample_queries,
)
from .index import Filter, TokenIndex, open_snapshot
from .search import Query, search
from .service import serve

logger = logging.getLogger("tokvec.cli")


class UsageError(Exception):
    """A flag combination argparse cannot express; exits with code 2."""


def _print_json(payload) -> None:
    print(json.dumps(payload))


def _cmd_gen_data(args) -> int:
    corpus = make_gaussian_mixture(
        n=args.n, d=args.d, components=args.components, sigma=args.sigma, seed=args.seed
    )
    save_corpus(corpus, args.out, args.format)
    logger.info("generated %d vectors of dimension %d", corpus.n, corpus.dimension)
    _print_json({"out": str(args.out), "format": args.format, "n": corpus.n, "d": corpus.dimension})
    return 0


def _cmd_train_codebook(args) -> int:
    corpus = load_corpus(args.input, args.format)
    encoder = SubvectorClusteringEncoder(
        n_subvectors=args.m,
        n_clusters=args.k,
        max_iter=args.max_iter,
        tol=args.tol,
        random_state=args.seed,
        n_init=args.restarts,
        train_sample_size=args.train_sample_size,
    )
    encoder.fit(corpus.vectors)
    save_codebook(encoder.codebook_, args.out)
    logger.info("trained codebook m=%d k=%d on %d vectors", args.m, args.k, corpus.n)
    _print_json({"out": str(args.out), "d": corpus.dimension, "m": args.m, "k": args.k, "seed": args.seed})
    return 0


def _cmd_build_index(args) -> int:
    if (args.codebook is None) == (args.p is None):
        raise UsageError("build-index needs exactly one of --codebook or --p (rounding decimals)")
    corpus = load_corpus(args.input, args.format)
    if args.codebook is not None:
        encoder = SubvectorClusteringEncoder.from_codebook(load_codebook(args.codebook))
    else:
        encoder = RoundingEncoder(decimals=args.p, max_tokens=args.m)
    index = TokenIndex.build(corpus, encoder)
    index.snapshot(args.out)
    logger.info("built index n=%d tokens=%d at %s", index.n, index.token_count, args.out)
    _print_json({"out": str(args.out), "n": index.n, "d": index.dimension, "token_count": index.token_count})
    return 0


def _load_query_file(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if isinstance(payload, list):
        return payload, ()
    if isinstance(payload, dict):
        unknown = set(payload) - {"vector", "filters"}
        if unknown:
            raise ValueError(f"{path}: unknown query keys: {sorted(unknown)}")
        if "vector" not in payload:
            raise ValueError(f"{path}: query object needs a 'vector' array")
        filters = tuple(Filter.from_json(f) for f in payload.get("filters", []))
        return payload["vector"], filters
    raise ValueError(f"{path}: query file must be a JSON array or object")


def _cmd_search(args) -> int:
    index = open_snapshot(args.index)
    try:
        vector, filters = _load_query_file(args.vector_file)
        window = args.window if args.window is not None else 10 * args.size
        query = Query(
            vector=np.asarray(vector, dtype=np.float64),
            size=args.size,
            window=window,
            filters=filters,
        )
        started = time.perf_counter()
        result = search(index, query)
        took_ms = (time.perf_counter() - started) * 1000.0
    finally:
        index.close()
    _print_json(
        {
            "hits": [
                {
                    "id": hit.id,
                    "distance": hit.distance,
                    "overlap_score": hit.overlap_score,
                    # Same flat form the HTTP service answers with.
                    "metadata": {
                        **hit.metadata.string_fields,
                        **hit.metadata.numeric_fields,
                    },
                }
                for hit in result.hits
            ],
            "exhausted": result.exhausted,
            "took_ms": took_ms,
        }
    )
    return 0


def _parse_pair(spec: str, flag: str) -> tuple:
    parts = [p.strip() for p in spec.split(",")]
    if len(parts) != 2:
        raise UsageError(f"{flag} takes 'A,B', got {spec!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"{flag} takes two integers, got {spec!r}") from None


def _parse_windows(spec: str) -> list:
    try:
        windows = [int(p.strip()) for p in spec.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"--windows takes comma-separated integers, got {spec!r}") from None
    if not windows:
        raise UsageError("--windows must name at least one window")
    return windows


def _cmd_evaluate(args) -> int:
    corpus = load_corpus(args.input, args.format)
    encoders = []
    for spec in args.rounding or []:
        p, m = _parse_pair(spec, "--rounding")
        encoders.append(RoundingEncoder(decimals=p, max_tokens=m))
    for spec in args.clustering or []:
        k, m = _parse_pair(spec, "--clustering")
        encoders.append(
            SubvectorClusteringEncoder(n_subvectors=m, n_clusters=k, random_state=args.seed)
        )
    if not encoders:
        raise UsageError("evaluate needs at least one --rounding P,M or --clustering K,M")
    windows = _parse_windows(args.windows)
    queries, query_ids = sample_queries(corpus, args.queries, args.seed)
    exclude_ids = None if args.include_self else query_ids
    records = run_grid(
        corpus, queries, encoders, windows, k_eval=args.k_eval, exclude_ids=exclude_ids
    )
    frontier = pareto_frontier(records, latency_stat=args.latency_stat)
    records_path, frontier_path = emit_report(records, frontier, args.out)
    logger.info("evaluated %d grid cells", len(records))
    _print_json(
        {
            "records": len(records),
            "frontier_points": len(frontier),
            "files": [str(records_path), str(frontier_path)],
        }
    )
    return 0


def _cmd_serve(args) -> int:
    if (args.index is None) == (args.config is None):
        raise UsageError("serve needs exactly one of --index or --config")
    if args.index is not None:
        index_dirs = {args.name: args.index}
    else:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
        if not isinstance(config, dict) or not isinstance(config.get("indexes"), dict):
            raise ValueError(f"{args.config}: config must look like {{\"indexes\": {{name: dir}}}}")
        if not config["indexes"]:
            raise ValueError(f"{args.config}: config mounts no indexes")
        index_dirs = config["indexes"]
    serve(index_dirs, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokvec",
        description="Token-based approximate nearest-neighbor search over dense vectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a seeded Gaussian-mixture corpus")
    p.add_argument("--n", type=int, required=True, help="number of vectors")
    p.add_argument("--d", type=int, required=True, help="vector dimension")
    p.add_argument("--components", type=int, required=True, help="mixture components")
    p.add_argument("--sigma", type=float, default=0.5, help="within-component scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output corpus path")
    p.add_argument("--format", choices=CORPUS_FORMATS, default="jsonl")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-codebook", help="train a subvector-clustering codebook")
    p.add_argument("--input", required=True, help="corpus path")
    p.add_argument("--format", choices=CORPUS_FORMATS, default="jsonl")
    p.add_argument("--m", type=int, required=True, help="subvector positions")
    p.add_argument("--k", type=int, required=True, help="clusters per position")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--restarts", type=int, default=1, help="k-means restarts per position")
    p.add_argument("--train-sample-size", type=int, default=100_000)
    p.add_argument("--out", required=True, help="codebook JSON path")
    p.set_defaults(func=_cmd_train_codebook)

    p = sub.add_parser("build-index", help="encode a corpus and snapshot the index")
    p.add_argument("--input", required=True, help="corpus path")
    p.add_argument("--format", choices=CORPUS_FORMATS, default="jsonl")
    p.add_argument("--codebook", help="codebook JSON (clustering encoder)")
    p.add_argument("--p", type=int, help="rounding decimals (rounding encoder)")
    p.add_argument("--m", type=int, help="rounding token budget (default: keep all)")
    p.add_argument("--out", required=True, help="snapshot directory")
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("search", help="search a snapshot with a query from a JSON file")
    p.add_argument("--index", required=True, help="snapshot directory")
    p.add_argument(
        "--vector-file",
        required=True,
        help="JSON array, or object {\"vector\": [...], \"filters\": [...]}",
    )
    p.add_argument("--size", type=int, default=10, help="hits to return")
    p.add_argument("--window", type=int, help="rerank window (default 10*size)")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("evaluate", help="run an encoder/window grid and write CSV reports")
    p.add_argument("--input", required=True, help="corpus path")
    p.add_argument("--format", choices=CORPUS_FORMATS, default="jsonl")
    p.add_argument("--queries", type=int, default=100, help="queries sampled from the corpus")
    p.add_argument("--k-eval", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--windows", default="24,48,96,192", help="comma-separated rerank windows")
    p.add_argument(
        "--rounding",
        action="append",
        metavar="P,M",
        help="rounding config: decimals,token-budget (repeatable)",
    )
    p.add_argument(
        "--clustering",
        action="append",
        metavar="K,M",
        help="clustering config: clusters,positions (repeatable)",
    )
    p.add_argument(
        "--include-self",
        action="store_true",
        help="keep the query itself in gold and results",
    )
    p.add_argument("--latency-stat", choices=LATENCY_STATS, default="mean")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="serve snapshots over HTTP")
    p.add_argument("--index", help="snapshot directory (single-index mode)")
    p.add_argument("--name", default="default", help="index name for --index")
    p.add_argument("--config", help="JSON file {\"indexes\": {name: dir}}")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=_cmd_serve)

    return parser


def _configure_logging() -> None:
    name = os.environ.get("TOKVEC_LOG", "").strip().upper()
    level = getattr(logging, name, None) if name else logging.WARNING
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    """Run one CLI invocation; returns the process exit code."""
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TokvecError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
