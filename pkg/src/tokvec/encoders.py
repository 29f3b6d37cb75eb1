"""Vector-to-token encoders.

Both encoders turn a dense float vector into a small set of string tokens
whose overlap statistics approximate Euclidean proximity, which is what
lets a term-based inverted index serve as the candidate generator for
nearest-neighbor search.

* RoundingEncoder keeps the ``max_tokens`` largest-magnitude components
  and emits ``pos{i}val{v}`` tokens, with ``v`` the component rounded to a
  fixed number of decimals.
* SubvectorClusteringEncoder splits the vector into contiguous equal-width
  subvectors, learns one k-means codebook per position, and emits
  ``pos{i}cluster{j}`` tokens naming each subvector's nearest centroid.
  It always emits exactly one token per position.

Positions and cluster numbers are 1-based in the token text. Both classes
follow the scikit-learn estimator conventions (fit/transform/get_params),
so they compose with clone() and pipelines.
"""
from __future__ import annotations

import decimal
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import CodebookFormatError
from .kmeans import kmeans, squared_distances
from .validation import as_float_matrix, as_float_vector, check_dimension, check_seed

CODEBOOK_FORMAT_VERSION = 1

# Wide precision so quantize never overflows for any finite float64.
_DECIMAL_CTX = decimal.Context(prec=400)


def format_rounded_token(position: int, value: float, decimals: int) -> str:
    """Render one ``pos{i}val{v}`` token.

    The value is rounded half-away-from-zero on its exact binary value and
    printed with exactly ``decimals`` fractional digits (none, and no
    decimal point, when ``decimals`` is 0). A result of zero is always
    printed without a sign so -0.004 and 0.004 produce the same token.
    """
    if int(position) < 1:
        raise ValueError(f"position must be >= 1, got {position}")
    if int(decimals) < 0:
        raise ValueError(f"decimals must be >= 0, got {decimals}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"token value must be finite, got {value!r}")
    exponent = decimal.Decimal(1).scaleb(-int(decimals))
    quantized = decimal.Decimal(value).quantize(
        exponent, rounding=decimal.ROUND_HALF_UP, context=_DECIMAL_CTX
    )
    if quantized.is_zero():
        quantized = quantized.copy_abs()
    return f"pos{int(position)}val{quantized}"


class RoundingEncoder(TransformerMixin, BaseEstimator):
    """Tokenize by rounding the largest-magnitude components.

    Parameters
    ----------
    decimals : int, number of fractional digits kept per component.
    max_tokens : int or None, how many components to keep, chosen by
        descending absolute value with ties going to the lower position;
        None keeps all of them.

    The encoder is stateless; fit only validates parameters. It accepts
    vectors of any dimensionality.
    """

    def __init__(self, decimals: int = 2, max_tokens=None):
        self.decimals = decimals
        self.max_tokens = max_tokens

    def _check_params(self):
        if isinstance(self.decimals, bool) or int(self.decimals) < 0:
            raise ValueError(f"decimals must be a non-negative integer, got {self.decimals!r}")
        if self.max_tokens is not None and int(self.max_tokens) < 1:
            raise ValueError(f"max_tokens must be None or >= 1, got {self.max_tokens!r}")

    def fit(self, X=None, y=None):
        self._check_params()
        return self

    @property
    def expected_dimension(self):
        return None

    def encode(self, values) -> frozenset:
        """Token set for one vector."""
        self._check_params()
        x = as_float_vector(values)
        keep = x.size if self.max_tokens is None else min(int(self.max_tokens), x.size)
        order = np.argsort(-np.abs(x), kind="stable")[:keep]
        p = int(self.decimals)
        return frozenset(format_rounded_token(int(i) + 1, x[int(i)], p) for i in order)

    def transform(self, X) -> list:
        """Token sets for each row of X."""
        self._check_params()
        X = as_float_matrix(X)
        keep = X.shape[1] if self.max_tokens is None else min(int(self.max_tokens), X.shape[1])
        order = np.argsort(-np.abs(X), axis=1, kind="stable")[:, :keep]
        p = int(self.decimals)
        out = []
        for row, cols in zip(X, order):
            out.append(frozenset(format_rounded_token(int(i) + 1, row[int(i)], p) for i in cols))
        return out

    def describe(self) -> dict:
        self._check_params()
        return {
            "scheme": "rounding",
            "p": int(self.decimals),
            "m": None if self.max_tokens is None else int(self.max_tokens),
        }


@dataclass(frozen=True)
class Codebook:
    """Trained per-position centroids for the subvector-clustering encoder.

    centroids has shape (n_positions, n_clusters, dimension // n_positions).
    training_seed is the root seed the codebook was trained from; position
    ``i`` trains with seed ``training_seed + i`` so runs are reproducible.
    """

    dimension: int
    n_positions: int
    n_clusters: int
    training_seed: int
    centroids: np.ndarray

    def __post_init__(self):
        if self.dimension < 1 or self.n_positions < 1 or self.n_clusters < 1:
            raise ValueError("dimension, n_positions and n_clusters must all be >= 1")
        if self.dimension % self.n_positions != 0:
            raise ValueError(
                f"dimension {self.dimension} is not divisible by "
                f"n_positions={self.n_positions}; subvectors are not padded"
            )
        check_seed(self.training_seed)
        expected = (self.n_positions, self.n_clusters, self.dimension // self.n_positions)
        arr = np.asarray(self.centroids, dtype=np.float64)
        if arr.shape != expected:
            raise ValueError(f"centroids must have shape {expected}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("centroids contain non-finite values")
        object.__setattr__(self, "centroids", arr)

    @property
    def subvector_length(self) -> int:
        return self.dimension // self.n_positions

    def assign_batch(self, X: np.ndarray) -> np.ndarray:
        """Zero-based nearest-centroid labels, shape (n, n_positions).

        Distance ties go to the lowest cluster index.
        """
        X = as_float_matrix(X)
        check_dimension(X.shape[1], self.dimension)
        parts = X.reshape(X.shape[0], self.n_positions, self.subvector_length)
        labels = np.empty((X.shape[0], self.n_positions), dtype=np.int64)
        for i in range(self.n_positions):
            labels[:, i] = squared_distances(
                np.ascontiguousarray(parts[:, i, :]), self.centroids[i]
            ).argmin(axis=1)
        return labels


def save_codebook(codebook: Codebook, path) -> None:
    """Write a codebook as JSON with full float precision."""
    payload = {
        "version": CODEBOOK_FORMAT_VERSION,
        "d": int(codebook.dimension),
        "m": int(codebook.n_positions),
        "k": int(codebook.n_clusters),
        "seed": int(codebook.training_seed),
        "centroids": codebook.centroids.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_codebook(path) -> Codebook:
    """Read a codebook JSON file, validating version and shape."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise CodebookFormatError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise CodebookFormatError(f"{path}: invalid codebook JSON: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise CodebookFormatError(f"{path}: codebook JSON must be an object")
    unknown = set(payload) - {"version", "d", "m", "k", "seed", "centroids"}
    if unknown:
        raise CodebookFormatError(f"{path}: unknown codebook keys: {sorted(unknown)}")
    missing = {"version", "d", "m", "k", "seed", "centroids"} - set(payload)
    if missing:
        raise CodebookFormatError(f"{path}: missing codebook keys: {sorted(missing)}")
    if payload["version"] != CODEBOOK_FORMAT_VERSION:
        raise CodebookFormatError(
            f"{path}: codebook version {payload['version']!r} is not supported "
            f"(expected {CODEBOOK_FORMAT_VERSION})"
        )
    try:
        return Codebook(
            dimension=int(payload["d"]),
            n_positions=int(payload["m"]),
            n_clusters=int(payload["k"]),
            training_seed=int(payload["seed"]),
            centroids=np.asarray(payload["centroids"], dtype=np.float64),
        )
    except (TypeError, ValueError) as exc:
        raise CodebookFormatError(f"{path}: invalid codebook: {exc}") from exc


class SubvectorClusteringEncoder(TransformerMixin, BaseEstimator):
    """Tokenize by per-position nearest centroids.

    fit() splits each training vector into ``n_subvectors`` contiguous
    pieces (the dimensionality must divide evenly) and trains an
    independent k-means codebook per position; transform() emits exactly
    one ``pos{i}cluster{j}`` token per position. Training subsamples to at
    most ``train_sample_size`` rows (seeded, without replacement) before
    clustering.
    """

    def __init__(
        self,
        n_subvectors: int = 8,
        n_clusters: int = 256,
        max_iter: int = 100,
        tol: float = 1e-4,
        random_state: int = 0,
        n_init: int = 1,
        train_sample_size: int = 100_000,
    ):
        self.n_subvectors = n_subvectors
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.n_init = n_init
        self.train_sample_size = train_sample_size

    def fit(self, X, y=None):
        """Train one codebook per subvector position on the rows of X."""
        m = int(self.n_subvectors)
        k = int(self.n_clusters)
        if m < 1:
            raise ValueError(f"n_subvectors must be >= 1, got {self.n_subvectors!r}")
        if k < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters!r}")
        if int(self.train_sample_size) < 1:
            raise ValueError(
                f"train_sample_size must be >= 1, got {self.train_sample_size!r}"
            )
        seed = check_seed(self.random_state)
        X = as_float_matrix(X)
        n, d = X.shape
        if d % m != 0:
            raise ValueError(
                f"dimension {d} is not divisible by n_subvectors={m}; "
                "subvectors are not padded"
            )
        if n == 0:
            raise ValueError("cannot train a codebook on an empty matrix")
        cap = int(self.train_sample_size)
        if n > cap:
            rng = np.random.default_rng(seed)
            X = X[rng.choice(n, size=cap, replace=False)]
        if k > X.shape[0]:
            raise ValueError(
                f"n_clusters={k} exceeds the {X.shape[0]} available training vectors"
            )
        sub = d // m
        parts = X.reshape(X.shape[0], m, sub)
        centroids = np.empty((m, k, sub), dtype=np.float64)
        for i in range(m):
            result = kmeans(
                np.ascontiguousarray(parts[:, i, :]),
                k,
                max_iter=int(self.max_iter),
                tol=float(self.tol),
                random_state=seed + i,
                n_init=int(self.n_init),
            )
            centroids[i] = result.centroids
        self.codebook_ = Codebook(
            dimension=d,
            n_positions=m,
            n_clusters=k,
            training_seed=seed,
            centroids=centroids,
        )
        self.n_features_in_ = d
        return self

    @classmethod
    def from_codebook(cls, codebook: Codebook) -> "SubvectorClusteringEncoder":
        """A fitted encoder wrapping an existing codebook."""
        enc = cls(
            n_subvectors=codebook.n_positions,
            n_clusters=codebook.n_clusters,
            random_state=codebook.training_seed,
        )
        enc.codebook_ = codebook
        enc.n_features_in_ = codebook.dimension
        return enc

    @property
    def expected_dimension(self):
        check_is_fitted(self, "codebook_")
        return self.codebook_.dimension

    def _tokens_by_position(self) -> list:
        cb = self.codebook_
        return [
            [f"pos{i + 1}cluster{j + 1}" for j in range(cb.n_clusters)]
            for i in range(cb.n_positions)
        ]

    def encode(self, values) -> frozenset:
        """Token set for one vector: exactly one token per position."""
        check_is_fitted(self, "codebook_")
        x = as_float_vector(values)
        labels = self.codebook_.assign_batch(x.reshape(1, -1))[0]
        return frozenset(
            f"pos{i + 1}cluster{int(label) + 1}" for i, label in enumerate(labels)
        )

    def transform(self, X) -> list:
        """Token sets for each row of X."""
        check_is_fitted(self, "codebook_")
        labels = self.codebook_.assign_batch(as_float_matrix(X))
        table = self._tokens_by_position()
        return [
            frozenset(table[i][label] for i, label in enumerate(row))
            for row in labels
        ]

    def describe(self) -> dict:
        if hasattr(self, "codebook_"):
            cb = self.codebook_
            return {
                "scheme": "clustering",
                "m": int(cb.n_positions),
                "k": int(cb.n_clusters),
                "seed": int(cb.training_seed),
            }
        return {
            "scheme": "clustering",
            "m": int(self.n_subvectors),
            "k": int(self.n_clusters),
            "seed": int(self.random_state),
        }
