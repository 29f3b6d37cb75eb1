"""tokvec: approximate nearest-neighbor search over string tokens.

Dense vectors are encoded into small token sets, candidates are retrieved
from an inverted index by token overlap, and a final exact Euclidean
rerank orders the results. The same pipeline is available as a library,
a CLI (``tokvec``) and an HTTP service.
"""
from .corpus import (
    Corpus,
    FeatureVector,
    Metadata,
    load_corpus,
    save_corpus,
)
from .encoders import (
    Codebook,
    RoundingEncoder,
    SubvectorClusteringEncoder,
    format_rounded_token,
    load_codebook,
    save_codebook,
)
from .errors import (
    CodebookFormatError,
    CorpusFormatError,
    DimensionMismatchError,
    SnapshotError,
    TokvecError,
    UnknownFilterFieldError,
)
from .evaluate import (
    EvalRecord,
    GoldStandard,
    LatencyStats,
    ParetoPoint,
    brute_force_knn,
    emit_report,
    make_gaussian_mixture,
    pareto_frontier,
    precision_at_k,
    run_grid,
    sample_queries,
)
from .index import (
    Candidate,
    Filter,
    InMemoryVectorStore,
    PagedVectorStore,
    TokenIndex,
    apply_filters,
    encode_query,
    open_snapshot,
)
from .kmeans import KMeansResult, kmeans
from .search import (
    Hit,
    Query,
    SearchResult,
    euclidean_distance,
    rerank,
    search,
)
from .service import create_app, serve

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "Codebook",
    "CodebookFormatError",
    "Corpus",
    "CorpusFormatError",
    "DimensionMismatchError",
    "EvalRecord",
    "FeatureVector",
    "Filter",
    "GoldStandard",
    "Hit",
    "InMemoryVectorStore",
    "KMeansResult",
    "LatencyStats",
    "Metadata",
    "PagedVectorStore",
    "ParetoPoint",
    "Query",
    "RoundingEncoder",
    "SearchResult",
    "SnapshotError",
    "SubvectorClusteringEncoder",
    "TokenIndex",
    "TokvecError",
    "UnknownFilterFieldError",
    "apply_filters",
    "brute_force_knn",
    "create_app",
    "emit_report",
    "encode_query",
    "euclidean_distance",
    "format_rounded_token",
    "kmeans",
    "load_codebook",
    "load_corpus",
    "make_gaussian_mixture",
    "open_snapshot",
    "pareto_frontier",
    "precision_at_k",
    "rerank",
    "run_grid",
    "sample_queries",
    "save_codebook",
    "save_corpus",
    "search",
    "serve",
    "__version__",
]
