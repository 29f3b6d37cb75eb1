import numpy as np
import pytest

from tokvec import (
    Corpus,
    Metadata,
    SubvectorClusteringEncoder,
    TokenIndex,
    make_gaussian_mixture,
)


@pytest.fixture(scope="session")
def small_mixture() -> Corpus:
    """300 vectors in 16 dims, 4 well-separated components, with metadata."""
    return make_gaussian_mixture(300, 16, 4, sigma=0.5, seed=42)


@pytest.fixture(scope="session")
def small_clustering_index(small_mixture) -> TokenIndex:
    encoder = SubvectorClusteringEncoder(
        n_subvectors=4, n_clusters=8, random_state=5
    ).fit(small_mixture.vectors)
    return TokenIndex.build(small_mixture, encoder)


@pytest.fixture()
def tiny_corpus() -> Corpus:
    """Three hand-written documents with mixed metadata."""
    return Corpus(
        ids=["a", "b", "c"],
        vectors=np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]]),
        metadata=[
            Metadata(string_fields={"color": "red"}, numeric_fields={"price": 10.0}),
            Metadata(string_fields={"color": "blue"}, numeric_fields={"price": 25.0}),
            Metadata(string_fields={"color": "red"}),
        ],
    )
