"""Two-stage search: token-overlap retrieval, then exact rerank.

Distances are always computed in float64, whatever the storage precision,
and rerank shares its distance arithmetic with the brute-force evaluation
path so the two agree bit-for-bit on identical inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Metadata
from .index import Candidate, Filter, TokenIndex, encode_query
from .validation import as_float_vector, check_dimension


def euclidean_distance(a, b) -> float:
    """Exact Euclidean distance between two equal-length vectors."""
    x = as_float_vector(a, "a")
    y = as_float_vector(b, "b")
    check_dimension(y.size, x.size, context="b")
    return float(np.sqrt(((x - y) ** 2).sum()))


def distances_to(query: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Euclidean distance from one query to each row, in float64."""
    diff = np.asarray(vectors, dtype=np.float64) - np.asarray(query, dtype=np.float64)
    return np.sqrt(np.einsum("nd,nd->n", diff, diff))


@dataclass(frozen=True)
class Query:
    """A search request: what to look for and how hard to look.

    size is how many hits to return; window is how many candidates the
    retrieval stage hands to the exact rerank (1 <= size <= window).
    """

    vector: np.ndarray
    size: int
    window: int
    filters: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "vector", as_float_vector(self.vector, "query vector"))
        object.__setattr__(self, "filters", tuple(self.filters))
        if int(self.size) < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        if int(self.window) < int(self.size):
            raise ValueError(
                f"window must be >= size, got window={self.window}, size={self.size}"
            )
        for f in self.filters:
            if not isinstance(f, Filter):
                raise TypeError(f"filters must be Filter instances, got {type(f).__name__}")


@dataclass(frozen=True)
class Hit:
    """One search result, carrying both stage scores."""

    id: str
    distance: float
    overlap_score: int
    metadata: Metadata


@dataclass(frozen=True)
class SearchResult:
    """Ranked hits plus whether the candidate pool ran short of ``size``."""

    hits: tuple
    exhausted: bool


def rerank(index: TokenIndex, candidates, query_vector, size: int) -> list:
    """Order candidates by exact distance to the query, keep the best ``size``.

    Ties in distance break toward the lower ordinal. Fewer than ``size``
    candidates simply yields fewer hits.
    """
    if int(size) < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    candidates = list(candidates)
    if not candidates:
        return []
    query = as_float_vector(query_vector, "query vector")
    check_dimension(query.size, index.dimension, context="query vector")
    ordinals = np.array([c.ordinal for c in candidates], dtype=np.int64)
    overlaps = {c.ordinal: c.overlap_score for c in candidates}
    vectors = index.vector_store.take(ordinals)
    dists = distances_to(query, vectors)
    order = np.lexsort((ordinals, dists))[: int(size)]
    hits = []
    for i in order:
        ordinal = int(ordinals[i])
        hits.append(
            Hit(
                id=index.id_at(ordinal),
                distance=float(dists[i]),
                overlap_score=int(overlaps[ordinal]),
                metadata=index.metadata_at(ordinal),
            )
        )
    return hits


def search(index: TokenIndex, query: Query) -> SearchResult:
    """Encode, retrieve by token overlap, rerank exactly.

    ``exhausted`` is set when retrieval produced fewer candidates than the
    requested size (the corpus, filters, or token overlap ran out).
    """
    tokens = encode_query(index, query.vector)
    candidates = index.retrieve_candidates(tokens, query.window, query.filters)
    hits = rerank(index, candidates, query.vector, query.size)
    return SearchResult(hits=tuple(hits), exhausted=len(candidates) < int(query.size))
