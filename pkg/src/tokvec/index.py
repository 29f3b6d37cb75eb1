"""Inverted token index with metadata filtering and snapshot persistence.

An index maps tokens to ascending document ordinals and keeps a forward
store of the original vectors for the exact rerank stage. Candidate
retrieval counts how many query tokens each document shares (documents
sharing none are never candidates), applies filters before truncation so
the window is spent only on documents that can actually be returned, and
orders by (overlap descending, ordinal ascending).

A snapshot directory contains:

* ``manifest.json``: format version, n, dimension, encoder binding, and a
  sha256 checksum per data file, verified on open.
* ``postings.bin``: per token, a u16 little-endian byte length, the UTF-8
  token bytes, a u32 posting count, then the ordinals delta-encoded as
  unsigned LEB128 varints.
* ``vectors.tvec``: the forward vectors in the packed-binary corpus format.
* ``metadata.jsonl``: ids and metadata, one record per ordinal.
* ``codebook.json``: present when the index was built with the
  subvector-clustering encoder.

Opening a snapshot does not load vectors into memory: the forward store
reads rows on demand (tracked by ``rows_read``), so only the rerank window
is ever paged in.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    PACKED_HEADER,
    Corpus,
    Metadata,
    read_id_metadata_jsonl,
    read_packed_header,
    write_id_metadata_jsonl,
    write_packed_vectors,
)
from .encoders import RoundingEncoder, SubvectorClusteringEncoder, load_codebook, save_codebook
from .errors import SnapshotError, UnknownFilterFieldError
from .validation import as_float_vector, check_dimension

SNAPSHOT_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

_TOKEN_LEN = struct.Struct("<H")
_POSTING_COUNT = struct.Struct("<I")


@dataclass(frozen=True)
class Filter:
    """A metadata predicate: exact string match or inclusive numeric range."""

    kind: str
    field: str
    value: str = None
    gte: float = None
    lte: float = None

    def __post_init__(self):
        if not isinstance(self.field, str) or not self.field:
            raise ValueError("filter field must be a nonempty string")
        if self.kind == "term":
            if not isinstance(self.value, str):
                raise ValueError(f"term filter on {self.field!r} needs a string value")
            if self.gte is not None or self.lte is not None:
                raise ValueError("term filters take no bounds")
        elif self.kind == "range":
            if self.value is not None:
                raise ValueError("range filters take no term value")
            if self.gte is None and self.lte is None:
                raise ValueError(f"range filter on {self.field!r} needs gte and/or lte")
            for bound in (self.gte, self.lte):
                if bound is not None and (
                    isinstance(bound, bool)
                    or not isinstance(bound, (int, float))
                    or not math.isfinite(bound)
                ):
                    raise ValueError(f"range bounds must be finite numbers, got {bound!r}")
            if self.gte is not None and self.lte is not None and self.gte > self.lte:
                raise ValueError(
                    f"range filter on {self.field!r} has gte {self.gte} > lte {self.lte}"
                )
        else:
            raise ValueError(f"unknown filter kind {self.kind!r}")

    @classmethod
    def term(cls, field: str, value: str) -> "Filter":
        return cls(kind="term", field=field, value=value)

    @classmethod
    def range(cls, field: str, gte=None, lte=None) -> "Filter":
        return cls(kind="range", field=field, gte=gte, lte=lte)

    def to_json(self) -> dict:
        if self.kind == "term":
            return {"type": "term", "field": self.field, "value": self.value}
        out = {"type": "range", "field": self.field}
        if self.gte is not None:
            out["gte"] = float(self.gte)
        if self.lte is not None:
            out["lte"] = float(self.lte)
        return out

    @classmethod
    def from_json(cls, obj) -> "Filter":
        if not isinstance(obj, dict):
            raise ValueError("filter must be a JSON object")
        kind = obj.get("type")
        if kind == "term":
            unknown = set(obj) - {"type", "field", "value"}
            if unknown:
                raise ValueError(f"term filter has unknown keys: {sorted(unknown)}")
            return cls.term(obj.get("field"), obj.get("value"))
        if kind == "range":
            unknown = set(obj) - {"type", "field", "gte", "lte"}
            if unknown:
                raise ValueError(f"range filter has unknown keys: {sorted(unknown)}")
            return cls.range(obj.get("field"), gte=obj.get("gte"), lte=obj.get("lte"))
        raise ValueError(f"filter type must be 'term' or 'range', got {kind!r}")


def apply_filters(metadata: Metadata, filters) -> bool:
    """True when the document satisfies every filter.

    A document lacking a filtered field fails that filter; range bounds are
    inclusive on both ends.
    """
    for f in filters:
        if f.kind == "term":
            if metadata.string_fields.get(f.field) != f.value:
                return False
        else:
            value = metadata.numeric_fields.get(f.field)
            if value is None:
                return False
            if f.gte is not None and value < f.gte:
                return False
            if f.lte is not None and value > f.lte:
                return False
    return True


@dataclass(frozen=True)
class Candidate:
    """A retrieval candidate: document ordinal and its token-overlap count."""

    ordinal: int
    overlap_score: int


class InMemoryVectorStore:
    """Forward store over an in-memory float64 array."""

    resident = True

    def __init__(self, vectors: np.ndarray):
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {arr.shape}")
        self._vectors = arr
        self._lock = threading.Lock()
        self.rows_read = 0

    @property
    def n(self) -> int:
        return int(self._vectors.shape[0])

    @property
    def dimension(self) -> int:
        return int(self._vectors.shape[1])

    def take(self, ordinals) -> np.ndarray:
        ords = np.asarray(ordinals, dtype=np.int64)
        out = self._vectors[ords]
        with self._lock:
            self.rows_read += int(ords.size)
        return out

    def write_packed(self, path) -> None:
        write_packed_vectors(path, self._vectors)

    def close(self) -> None:
        pass


class PagedVectorStore:
    """Forward store that reads float32 rows from a packed file on demand.

    Rows are fetched with positional reads, so concurrent readers need no
    shared seek state. Values are widened to float64 for distance math.
    """

    resident = False

    def __init__(self, path):
        self._path = Path(path)
        self._n, self._dimension = read_packed_header(self._path)
        self._fd = os.open(str(self._path), os.O_RDONLY)
        self._closed = False
        self._lock = threading.Lock()
        self.rows_read = 0

    @property
    def n(self) -> int:
        return self._n

    @property
    def dimension(self) -> int:
        return self._dimension

    def take(self, ordinals) -> np.ndarray:
        ords = np.asarray(ordinals, dtype=np.int64)
        stride = self._dimension * 4
        out = np.empty((ords.size, self._dimension), dtype=np.float64)
        for row, ordinal in enumerate(ords):
            ordinal = int(ordinal)
            if not 0 <= ordinal < self._n:
                raise IndexError(f"ordinal {ordinal} out of range for {self._n} vectors")
            data = os.pread(self._fd, stride, PACKED_HEADER.size + ordinal * stride)
            if len(data) != stride:
                raise SnapshotError(f"{self._path}: short read at ordinal {ordinal}")
            out[row] = np.frombuffer(data, dtype="<f4")
        with self._lock:
            self.rows_read += int(ords.size)
        return out

    def write_packed(self, path) -> None:
        shutil.copyfile(self._path, path)

    def close(self) -> None:
        if not self._closed:
            os.close(self._fd)
            self._closed = True


def _write_uvarint(buf: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


def _read_uvarint(data, pos: int) -> tuple:
    value = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise SnapshotError("postings file truncated inside a varint")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7


def _write_postings(path, postings: dict) -> None:
    with open(path, "wb") as fh:
        for token in sorted(postings):
            encoded = token.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"token too long to serialize: {token[:32]!r}...")
            ordinals = postings[token]
            buf = bytearray()
            buf += _TOKEN_LEN.pack(len(encoded))
            buf += encoded
            buf += _POSTING_COUNT.pack(len(ordinals))
            previous = None
            for ordinal in ordinals:
                ordinal = int(ordinal)
                _write_uvarint(buf, ordinal if previous is None else ordinal - previous)
                previous = ordinal
            fh.write(buf)


def _read_postings(path, n: int) -> dict:
    data = Path(path).read_bytes()
    postings = {}
    pos = 0
    while pos < len(data):
        if pos + _TOKEN_LEN.size > len(data):
            raise SnapshotError(f"{path}: truncated token header")
        (token_len,) = _TOKEN_LEN.unpack_from(data, pos)
        pos += _TOKEN_LEN.size
        if pos + token_len + _POSTING_COUNT.size > len(data):
            raise SnapshotError(f"{path}: truncated token record")
        token = data[pos : pos + token_len].decode("utf-8")
        pos += token_len
        (count,) = _POSTING_COUNT.unpack_from(data, pos)
        pos += _POSTING_COUNT.size
        ordinals = np.empty(count, dtype=np.int64)
        previous = None
        for i in range(count):
            delta, pos = _read_uvarint(data, pos)
            value = delta if previous is None else previous + delta
            if previous is not None and delta == 0:
                raise SnapshotError(f"{path}: non-ascending posting for token {token!r}")
            if not 0 <= value < n:
                raise SnapshotError(
                    f"{path}: posting ordinal {value} out of range for n={n}"
                )
            ordinals[i] = value
            previous = value
        if token in postings:
            raise SnapshotError(f"{path}: duplicate token record {token!r}")
        postings[token] = ordinals
    return postings


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _encoder_from_binding(binding: dict, directory: Path, codebook_name):
    scheme = binding.get("scheme")
    if scheme == "rounding":
        return RoundingEncoder(decimals=binding["p"], max_tokens=binding["m"])
    if scheme == "clustering":
        if not codebook_name:
            raise SnapshotError("clustering snapshot is missing its codebook file")
        return SubvectorClusteringEncoder.from_codebook(
            load_codebook(directory / codebook_name)
        )
    raise SnapshotError(f"unknown encoder scheme {scheme!r} in manifest")


class TokenIndex:
    """Immutable searchable collection: postings, forward vectors, metadata.

    Build one from a corpus with :meth:`build`, or reopen a snapshot with
    :meth:`open`. The index keeps the encoder it was built with so queries
    are tokenized identically to documents.
    """

    def __init__(self, ids, metadata, postings, store, encoder, dimension):
        self._ids = list(ids)
        self._metadata = list(metadata)
        self._postings = dict(postings)
        self._store = store
        self._encoder = encoder
        self._dimension = int(dimension)
        if store.n != len(self._ids):
            raise ValueError(f"store holds {store.n} vectors for {len(self._ids)} ids")
        if len(self._metadata) != len(self._ids):
            raise ValueError("metadata and ids must have equal length")
        self._id_to_ordinal = {}
        for ordinal, doc_id in enumerate(self._ids):
            if doc_id in self._id_to_ordinal:
                raise ValueError(f"duplicate document id {doc_id!r}")
            self._id_to_ordinal[doc_id] = ordinal
        self._string_fields = set()
        self._numeric_fields = set()
        for meta in self._metadata:
            self._string_fields.update(meta.string_fields)
            self._numeric_fields.update(meta.numeric_fields)

    @classmethod
    def build(cls, corpus: Corpus, encoder) -> "TokenIndex":
        """Encode every corpus vector and build the postings in ordinal order."""
        expected = encoder.expected_dimension
        if expected is not None:
            check_dimension(corpus.dimension, expected, context="corpus")
        token_sets = encoder.transform(corpus.vectors) if corpus.n else []
        lists: dict = {}
        for ordinal, tokens in enumerate(token_sets):
            for token in tokens:
                lists.setdefault(token, []).append(ordinal)
        postings = {t: np.asarray(v, dtype=np.int64) for t, v in lists.items()}
        return cls(
            ids=corpus.ids,
            metadata=corpus.metadata,
            postings=postings,
            store=InMemoryVectorStore(corpus.vectors),
            encoder=encoder,
            dimension=corpus.dimension,
        )

    @property
    def n(self) -> int:
        return len(self._ids)

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def encoder(self):
        return self._encoder

    @property
    def vector_store(self):
        return self._store

    @property
    def token_count(self) -> int:
        return len(self._postings)

    def postings_for(self, token: str) -> np.ndarray:
        return self._postings.get(token, np.empty(0, dtype=np.int64)).copy()

    def id_at(self, ordinal: int) -> str:
        return self._ids[ordinal]

    def metadata_at(self, ordinal: int) -> Metadata:
        return self._metadata[ordinal]

    def _check_filter_fields(self, filters) -> None:
        for f in filters:
            if f.kind == "term" and f.field not in self._string_fields:
                detail = "no document has it as a string field"
                if f.field in self._numeric_fields:
                    detail = "it is a numeric field; term filters match string fields"
                raise UnknownFilterFieldError(f.field, detail)
            if f.kind == "range" and f.field not in self._numeric_fields:
                detail = "no document has it as a numeric field"
                if f.field in self._string_fields:
                    detail = "it is a string field; range filters match numeric fields"
                raise UnknownFilterFieldError(f.field, detail)

    def retrieve_candidates(self, query_tokens, window: int, filters=()) -> list:
        """Top ``window`` documents by shared-token count.

        Documents sharing no token never appear; filters are applied before
        truncation; ordering is overlap descending with ordinal ascending
        as the tie-break.
        """
        if int(window) < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        tokens = set(query_tokens)
        if not tokens:
            raise ValueError("query token set is empty")
        filters = tuple(filters)
        self._check_filter_fields(filters)
        matched = [self._postings[t] for t in tokens if t in self._postings]
        if not matched:
            return []
        counts = np.bincount(np.concatenate(matched), minlength=self.n)
        if filters:
            passing = np.fromiter(
                (apply_filters(meta, filters) for meta in self._metadata),
                dtype=bool,
                count=self.n,
            )
            counts = np.where(passing, counts, 0)
        ordinals = np.flatnonzero(counts)
        if ordinals.size == 0:
            return []
        scores = counts[ordinals]
        order = np.lexsort((ordinals, -scores))[: int(window)]
        return [Candidate(int(ordinals[i]), int(scores[i])) for i in order]

    def stats(self) -> dict:
        return {
            "n": self.n,
            "d": self.dimension,
            "encoder": self._encoder.describe(),
            "token_count": self.token_count,
        }

    def snapshot(self, directory) -> None:
        """Persist the index as a self-describing directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {
            "vectors": "vectors.tvec",
            "postings": "postings.bin",
            "metadata": "metadata.jsonl",
        }
        self._store.write_packed(directory / files["vectors"])
        _write_postings(directory / files["postings"], self._postings)
        write_id_metadata_jsonl(directory / files["metadata"], self._ids, self._metadata)
        binding = self._encoder.describe()
        if binding["scheme"] == "clustering":
            files["codebook"] = "codebook.json"
            save_codebook(self._encoder.codebook_, directory / files["codebook"])
        manifest = {
            "format_version": SNAPSHOT_FORMAT_VERSION,
            "n": self.n,
            "dimension": self.dimension,
            "encoder": binding,
            "files": {
                key: {"name": name, "sha256": _sha256_file(directory / name)}
                for key, name in files.items()
            },
        }
        with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")

    @classmethod
    def open(cls, directory, *, verify_checksums: bool = True) -> "TokenIndex":
        """Open a snapshot directory with a lazily paged forward store."""
        directory = Path(directory)
        manifest_path = directory / MANIFEST_NAME
        if not manifest_path.exists():
            raise SnapshotError(f"{directory}: missing {MANIFEST_NAME}, not a snapshot")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"{manifest_path}: invalid JSON: {exc.msg}") from exc
        version = manifest.get("format_version")
        if version != SNAPSHOT_FORMAT_VERSION:
            raise SnapshotError(
                f"{directory}: snapshot format version {version!r} is not supported "
                f"(expected {SNAPSHOT_FORMAT_VERSION})"
            )
        files = manifest.get("files", {})
        for key in ("vectors", "postings", "metadata"):
            if key not in files:
                raise SnapshotError(f"{directory}: manifest lists no {key} file")
        for key, entry in files.items():
            path = directory / entry["name"]
            if not path.exists():
                raise SnapshotError(f"{directory}: missing snapshot file {entry['name']}")
            if verify_checksums:
                actual = _sha256_file(path)
                if actual != entry["sha256"]:
                    raise SnapshotError(
                        f"{path}: checksum mismatch, file is corrupt "
                        f"(expected {entry['sha256'][:12]}..., got {actual[:12]}...)"
                    )
        n = int(manifest["n"])
        dimension = int(manifest["dimension"])
        ids, metadata = read_id_metadata_jsonl(directory / files["metadata"]["name"])
        if len(ids) != n:
            raise SnapshotError(
                f"{directory}: manifest says n={n} but metadata has {len(ids)} records"
            )
        postings = _read_postings(directory / files["postings"]["name"], n)
        store = PagedVectorStore(directory / files["vectors"]["name"])
        if store.n != n or store.dimension != dimension:
            raise SnapshotError(
                f"{directory}: vector file holds ({store.n}, {store.dimension}), "
                f"manifest says ({n}, {dimension})"
            )
        codebook_name = files.get("codebook", {}).get("name")
        encoder = _encoder_from_binding(manifest.get("encoder", {}), directory, codebook_name)
        return cls(
            ids=ids,
            metadata=metadata,
            postings=postings,
            store=store,
            encoder=encoder,
            dimension=dimension,
        )

    def close(self) -> None:
        self._store.close()


def open_snapshot(directory, *, verify_checksums: bool = True) -> TokenIndex:
    """Open an index snapshot directory. See :meth:`TokenIndex.open`."""
    return TokenIndex.open(directory, verify_checksums=verify_checksums)


def encode_query(index: TokenIndex, vector) -> frozenset:
    """Tokenize a query with the index's own encoder, checking its dimension."""
    x = as_float_vector(vector, "query vector")
    check_dimension(x.size, index.dimension, context="query vector")
    return index.encoder.encode(x)
