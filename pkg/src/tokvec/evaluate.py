"""Evaluation harness: gold standards, precision@k, latency, Pareto frontier.

The gold standard is an exact linear scan sharing its distance arithmetic
with the rerank stage, so exactness comparisons are bit-for-bit. Latency is
wall-clock around the full search() call (encode + retrieve + rerank) and
nothing else; queries run sequentially so timings stay meaningful.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import clone

from .corpus import Corpus, Metadata
from .encoders import RoundingEncoder, SubvectorClusteringEncoder
from .index import TokenIndex
from .search import Query, distances_to, search
from .validation import as_float_matrix, as_float_vector, check_dimension, check_seed

LATENCY_STATS = ("mean", "p50", "p95")

RECORDS_CSV = "records.csv"
FRONTIER_CSV = "frontier.csv"
_RECORD_COLUMNS = (
    "scheme",
    "param",
    "m",
    "window",
    "mean_precision",
    "latency_mean",
    "latency_p50",
    "latency_p95",
    "query_count",
    "skipped_reason",
)


@dataclass(frozen=True)
class GoldStandard:
    """Exact nearest neighbors for one query, ascending by distance."""

    query_id: str
    neighbor_ids: tuple


@dataclass(frozen=True)
class LatencyStats:
    """Per-query wall-clock seconds around search()."""

    mean: float
    p50: float
    p95: float


@dataclass(frozen=True)
class EvalRecord:
    """One grid cell: an encoder config at one rerank window.

    param is the scheme's tuning knob (decimals for rounding, cluster count
    for clustering); m is the token budget / position count. A skipped cell
    keeps its reason and carries no measurements.
    """

    scheme: str
    param: object
    m: object
    window: int
    mean_precision: float
    latency: LatencyStats
    query_count: int
    skipped_reason: str = None


@dataclass(frozen=True)
class ParetoPoint:
    """A non-dominated (latency seconds, precision) operating point."""

    latency: float
    precision: float


def brute_force_knn(corpus: Corpus, query, k_eval: int, *, exclude_id=None, query_id=None) -> GoldStandard:
    """Exact k nearest neighbors by linear scan.

    Ascending distance with ordinal tie-break, optionally excluding one
    document id (the query itself, when it is a corpus member).
    """
    q = as_float_vector(query, "query")
    check_dimension(q.size, corpus.dimension, context="query")
    k = int(k_eval)
    if k < 1:
        raise ValueError(f"k_eval must be >= 1, got {k_eval}")
    eligible = corpus.n - (1 if exclude_id is not None and exclude_id in corpus else 0)
    if k > eligible:
        raise ValueError(f"k_eval={k} exceeds the {eligible} eligible documents")
    dists = distances_to(q, corpus.vectors)
    order = np.lexsort((np.arange(corpus.n), dists))
    neighbor_ids = []
    for ordinal in order:
        doc_id = corpus.id_at(int(ordinal))
        if exclude_id is not None and doc_id == exclude_id:
            continue
        neighbor_ids.append(doc_id)
        if len(neighbor_ids) == k:
            break
    if query_id is None:
        query_id = exclude_id if exclude_id is not None else ""
    return GoldStandard(query_id=query_id, neighbor_ids=tuple(neighbor_ids))


def precision_at_k(retrieved_ids, gold: GoldStandard) -> float:
    """Fraction of the gold neighbors present among the retrieved ids.

    The denominator is always the gold size; retrieving fewer ids (never
    more) simply caps the achievable score.
    """
    k = len(gold.neighbor_ids)
    if k == 0:
        raise ValueError("gold standard is empty")
    retrieved = list(retrieved_ids)
    if len(retrieved) > k:
        raise ValueError(f"{len(retrieved)} retrieved ids for k_eval={k}; truncate first")
    return len(set(retrieved) & set(gold.neighbor_ids)) / k


def sample_queries(corpus: Corpus, count: int, seed: int) -> tuple:
    """Draw query vectors uniformly from the corpus without replacement.

    Returns (vectors, ids); pass the ids as ``exclude_ids`` to run_grid for
    the self-exclusion protocol.
    """
    count = int(count)
    if count < 1 or count > corpus.n:
        raise ValueError(f"count must be in [1, {corpus.n}], got {count}")
    rng = np.random.default_rng(check_seed(seed))
    ordinals = rng.choice(corpus.n, size=count, replace=False)
    ids = [corpus.id_at(int(o)) for o in ordinals]
    return corpus.vectors[ordinals].copy(), ids


def _encoder_columns(encoder) -> tuple:
    if isinstance(encoder, RoundingEncoder):
        return ("rounding", encoder.decimals, encoder.max_tokens)
    if isinstance(encoder, SubvectorClusteringEncoder):
        return ("clustering", encoder.n_clusters, encoder.n_subvectors)
    desc = encoder.describe()
    return (desc["scheme"], desc.get("p", desc.get("k")), desc.get("m"))


def run_grid(corpus: Corpus, queries, encoders, windows, *, k_eval: int = 24, exclude_ids=None) -> list:
    """Measure every (encoder config, window) cell on a fixed query set.

    The index is built once per encoder config and reused across windows.
    Gold standards are computed once per query, before any timing. A cell
    whose configuration is infeasible for the corpus (for example a
    position count that does not divide d) becomes a skip record carrying
    the reason. With ``exclude_ids`` (one id per query, for corpus-member
    queries), the self-match is dropped from both gold and retrieved lists.
    """
    queries = as_float_matrix(np.asarray(queries, dtype=np.float64), "queries")
    check_dimension(queries.shape[1], corpus.dimension, context="queries")
    n_queries = queries.shape[0]
    encoders = list(encoders)
    windows = [int(w) for w in windows]
    if not encoders or not windows:
        raise ValueError("the grid needs at least one encoder and one window")
    if any(w < 1 for w in windows):
        raise ValueError(f"windows must be >= 1, got {windows}")
    k = int(k_eval)
    if k < 1:
        raise ValueError(f"k_eval must be >= 1, got {k_eval}")
    if exclude_ids is not None and len(exclude_ids) != n_queries:
        raise ValueError(f"{len(exclude_ids)} exclude_ids for {n_queries} queries")

    gold = []
    for qi in range(n_queries):
        exclude = exclude_ids[qi] if exclude_ids is not None else None
        gold.append(
            brute_force_knn(corpus, queries[qi], k, exclude_id=exclude, query_id=f"q{qi}")
        )

    records = []
    for encoder in encoders:
        scheme, param, m = _encoder_columns(encoder)
        try:
            fitted = clone(encoder)
            fitted.fit(corpus.vectors)
            index = TokenIndex.build(corpus, fitted)
        except ValueError as exc:
            for window in windows:
                records.append(
                    EvalRecord(
                        scheme=scheme,
                        param=param,
                        m=m,
                        window=window,
                        mean_precision=None,
                        latency=None,
                        query_count=0,
                        skipped_reason=str(exc),
                    )
                )
            continue
        for window in windows:
            precisions = np.empty(n_queries, dtype=np.float64)
            seconds = np.empty(n_queries, dtype=np.float64)
            for qi in range(n_queries):
                exclude = exclude_ids[qi] if exclude_ids is not None else None
                size = min(k + (1 if exclude is not None else 0), window)
                query = Query(vector=queries[qi], size=size, window=window)
                started = time.perf_counter()
                result = search(index, query)
                seconds[qi] = time.perf_counter() - started
                hit_ids = [h.id for h in result.hits]
                if exclude is not None:
                    hit_ids = [h for h in hit_ids if h != exclude]
                precisions[qi] = precision_at_k(hit_ids[:k], gold[qi])
            records.append(
                EvalRecord(
                    scheme=scheme,
                    param=param,
                    m=m,
                    window=window,
                    mean_precision=float(precisions.mean()),
                    latency=LatencyStats(
                        mean=float(seconds.mean()),
                        p50=float(np.percentile(seconds, 50)),
                        p95=float(np.percentile(seconds, 95)),
                    ),
                    query_count=n_queries,
                )
            )
    return records


def pareto_frontier(records, latency_stat: str = "mean") -> list:
    """Non-dominated (latency, precision) points, latency ascending.

    A point is dominated when another has latency <= and precision >= with
    at least one strict; duplicates collapse to one point, so precision is
    strictly increasing along the returned list.
    """
    if latency_stat not in LATENCY_STATS:
        raise ValueError(f"latency_stat must be one of {LATENCY_STATS}, got {latency_stat!r}")
    if not list(records):
        raise ValueError("records must be nonempty")
    points = []
    for record in records:
        if record.skipped_reason is not None or record.latency is None:
            continue
        points.append(
            (float(getattr(record.latency, latency_stat)), float(record.mean_precision))
        )
    points.sort(key=lambda point: (point[0], -point[1]))
    frontier = []
    best = float("-inf")
    for latency, precision in points:
        if precision > best:
            frontier.append(ParetoPoint(latency=latency, precision=precision))
            best = precision
    return frontier


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(records, frontier, path) -> tuple:
    """Write records.csv and frontier.csv under ``path``; returns both paths.

    Floats are written in shortest round-trip form, so parsing the files
    back reproduces the values exactly.
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    records_path = directory / RECORDS_CSV
    frontier_path = directory / FRONTIER_CSV
    with open(records_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RECORD_COLUMNS)
        for record in records:
            latency = record.latency
            writer.writerow(
                [
                    _cell(record.scheme),
                    _cell(record.param),
                    _cell(record.m),
                    _cell(record.window),
                    _cell(record.mean_precision),
                    _cell(latency.mean if latency else None),
                    _cell(latency.p50 if latency else None),
                    _cell(latency.p95 if latency else None),
                    _cell(record.query_count),
                    _cell(record.skipped_reason),
                ]
            )
    with open(frontier_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["latency", "precision"])
        for point in frontier:
            writer.writerow([_cell(point.latency), _cell(point.precision)])
    return records_path, frontier_path


def make_gaussian_mixture(n: int, d: int, components: int, sigma: float = 0.5, seed: int = 0) -> Corpus:
    """Seeded synthetic corpus: a Gaussian mixture with cluster structure.

    Component centers are standard normal; each point is its center plus
    ``sigma``-scaled noise. Every document carries a string field ``group``
    (its component) and a numeric field ``score`` (uniform in [0, 100)), so
    filtered search is exercisable out of the box.
    """
    n, d, components = int(n), int(d), int(components)
    if n < 1 or d < 1 or components < 1:
        raise ValueError("n, d and components must all be >= 1")
    sigma = float(sigma)
    if not (sigma >= 0.0):
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(check_seed(seed))
    centers = rng.standard_normal((components, d))
    assignment = rng.integers(0, components, size=n)
    vectors = centers[assignment] + sigma * rng.standard_normal((n, d))
    scores = rng.uniform(0.0, 100.0, size=n)
    ids = [f"doc{i:06d}" for i in range(n)]
    metadata = [
        Metadata(
            string_fields={"group": f"g{int(assignment[i])}"},
            numeric_fields={"score": float(scores[i])},
        )
        for i in range(n)
    ]
    return Corpus(ids, vectors, metadata)
