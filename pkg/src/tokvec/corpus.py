"""Corpus data model and the on-disk interchange formats.

Two formats are supported:

* ``jsonl``: one JSON object per line with keys ``id``, ``vector`` and an
  optional ``metadata`` object. Human-readable, no header; the dimension is
  taken from the first record, so an empty file is rejected.
* ``packed-binary``: a fixed header (magic ``TVEC``, format version,
  document count, dimension, all little-endian) followed by the vectors as
  contiguous float32 rows, with ids and metadata in a ``.meta.jsonl``
  sidecar. An empty corpus is representable because the header carries the
  dimension.

Loading is strict: malformed records, dimension mismatches, duplicate ids
and non-finite values are reported with the offending id or line, never
silently dropped.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import CorpusFormatError

PACKED_MAGIC = b"TVEC"
PACKED_FORMAT_VERSION = 1
PACKED_HEADER = struct.Struct("<4sIQI")  # magic, version, n, dimension

CORPUS_FORMATS = ("jsonl", "packed-binary")


@dataclass(frozen=True)
class Metadata:
    """Per-document attributes, split by type so filters stay unambiguous."""

    string_fields: dict = field(default_factory=dict)
    numeric_fields: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.string_fields.items():
            if not isinstance(name, str) or not name:
                raise ValueError(f"metadata field names must be nonempty strings, got {name!r}")
            if not isinstance(value, str):
                raise ValueError(f"string field {name!r} has non-string value {value!r}")
        for name, value in self.numeric_fields.items():
            if not isinstance(name, str) or not name:
                raise ValueError(f"metadata field names must be nonempty strings, got {name!r}")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"numeric field {name!r} has non-numeric value {value!r}")
            if not math.isfinite(value):
                raise ValueError(f"numeric field {name!r} must be finite, got {value!r}")
        shared = self.string_fields.keys() & self.numeric_fields.keys()
        if shared:
            raise ValueError(f"metadata fields appear in both maps: {sorted(shared)}")

    def is_empty(self) -> bool:
        return not self.string_fields and not self.numeric_fields

    def to_json(self) -> dict:
        return {
            "string_fields": dict(self.string_fields),
            "numeric_fields": {k: float(v) for k, v in self.numeric_fields.items()},
        }

    @classmethod
    def from_json(cls, obj) -> "Metadata":
        if not isinstance(obj, dict):
            raise ValueError(f"metadata must be an object, got {type(obj).__name__}")
        unknown = set(obj) - {"string_fields", "numeric_fields"}
        if unknown:
            raise ValueError(f"metadata has unknown keys: {sorted(unknown)}")
        return cls(
            string_fields=dict(obj.get("string_fields") or {}),
            numeric_fields=dict(obj.get("numeric_fields") or {}),
        )


EMPTY_METADATA = Metadata()


@dataclass(frozen=True)
class FeatureVector:
    """A single identified dense vector."""

    id: str
    values: np.ndarray


class Corpus:
    """An immutable in-memory collection of identified vectors.

    Vectors are held as one float64 array of shape (n, dimension); ids are
    unique nonempty strings; every document has a Metadata record (possibly
    empty). Ordinals (row positions) are the package-wide document handles.
    """

    def __init__(self, ids, vectors, metadata=None, *, dimension=None):
        ids = [str(i) for i in ids]
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.size == 0:
            if dimension is None:
                raise ValueError("dimension is required for an empty corpus")
            arr = arr.reshape(0, int(dimension))
        if arr.ndim != 2:
            raise ValueError(f"vectors must be a 2-D array, got shape {arr.shape}")
        if dimension is not None and arr.shape[1] != int(dimension):
            raise ValueError(
                f"explicit dimension {dimension} does not match vectors of width {arr.shape[1]}"
            )
        if len(ids) != arr.shape[0]:
            raise ValueError(f"{len(ids)} ids for {arr.shape[0]} vectors")
        if arr.shape[0] > 0 and arr.shape[1] == 0:
            raise ValueError("vectors must have at least one component")
        if metadata is None:
            metadata = [EMPTY_METADATA] * len(ids)
        metadata = list(metadata)
        if len(metadata) != len(ids):
            raise ValueError(f"{len(metadata)} metadata records for {len(ids)} vectors")

        seen: dict = {}
        for ordinal, doc_id in enumerate(ids):
            if not doc_id:
                raise ValueError(f"document at ordinal {ordinal} has an empty id")
            if doc_id in seen:
                raise CorpusFormatError(
                    f"duplicate document id {doc_id!r} (ordinals {seen[doc_id]} and {ordinal})"
                )
            seen[doc_id] = ordinal
        bad = np.flatnonzero(~np.isfinite(arr).all(axis=1))
        if bad.size:
            raise CorpusFormatError(
                f"vector for id {ids[int(bad[0])]!r} contains non-finite values"
            )

        self._ids = ids
        self._vectors = arr
        self._metadata = metadata
        self._ordinals = seen

    @property
    def n(self) -> int:
        return len(self._ids)

    @property
    def dimension(self) -> int:
        return int(self._vectors.shape[1])

    @property
    def ids(self) -> list:
        return list(self._ids)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def metadata(self) -> list:
        return list(self._metadata)

    def __len__(self) -> int:
        return self.n

    def id_at(self, ordinal: int) -> str:
        return self._ids[ordinal]

    def metadata_at(self, ordinal: int) -> Metadata:
        return self._metadata[ordinal]

    def ordinal_of(self, doc_id: str) -> int:
        try:
            return self._ordinals[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._ordinals

    def documents(self) -> Iterator[tuple]:
        for ordinal, doc_id in enumerate(self._ids):
            yield FeatureVector(doc_id, self._vectors[ordinal]), self._metadata[ordinal]


def _require_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CorpusFormatError(f"{where}: vector entries must be numbers, got {value!r}")
    return float(value)


def _parse_record(obj, where: str, allowed_keys: set) -> tuple:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"{where}: record must be a JSON object")
    unknown = set(obj) - allowed_keys
    if unknown:
        raise CorpusFormatError(f"{where}: record has unknown keys: {sorted(unknown)}")
    doc_id = obj.get("id")
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusFormatError(f"{where}: record needs a nonempty string 'id'")
    try:
        meta = Metadata.from_json(obj["metadata"]) if "metadata" in obj else EMPTY_METADATA
    except ValueError as exc:
        raise CorpusFormatError(f"{where}: {exc}") from exc
    return doc_id, meta


def _load_jsonl(path: Path) -> Corpus:
    ids, rows, metas = [], [], []
    dimension = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{where}: invalid JSON: {exc.msg}") from exc
            doc_id, meta = _parse_record(obj, where, {"id", "vector", "metadata"})
            vector = obj.get("vector")
            if not isinstance(vector, list) or not vector:
                raise CorpusFormatError(f"{where}: record needs a nonempty 'vector' array")
            values = [_require_number(v, where) for v in vector]
            if any(not math.isfinite(v) for v in values):
                raise CorpusFormatError(
                    f"{where}: vector for id {doc_id!r} contains non-finite values"
                )
            if dimension is None:
                dimension = len(values)
            elif len(values) != dimension:
                raise CorpusFormatError(
                    f"{where}: vector for id {doc_id!r} has dimension "
                    f"{len(values)}, expected {dimension}"
                )
            ids.append(doc_id)
            rows.append(values)
            metas.append(meta)
    if dimension is None:
        raise CorpusFormatError(
            f"{path}: empty jsonl corpus has no header to supply the dimension"
        )
    return Corpus(ids, np.array(rows, dtype=np.float64), metas)


def _save_jsonl(corpus: Corpus, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ordinal in range(corpus.n):
            record = {
                "id": corpus.id_at(ordinal),
                "vector": [float(v) for v in corpus.vectors[ordinal]],
            }
            meta = corpus.metadata_at(ordinal)
            if not meta.is_empty():
                record["metadata"] = meta.to_json()
            fh.write(json.dumps(record) + "\n")


def sidecar_path(path) -> Path:
    """The ids-and-metadata sidecar for a packed-binary vector file."""
    return Path(str(path) + ".meta.jsonl")


def write_id_metadata_jsonl(path, ids, metadata) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, meta in zip(ids, metadata):
            record = {"id": doc_id}
            if not meta.is_empty():
                record["metadata"] = meta.to_json()
            fh.write(json.dumps(record) + "\n")


def read_id_metadata_jsonl(path) -> tuple:
    """Read an id/metadata sidecar; returns (ids, metadata) lists."""
    ids, metas = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{where}: invalid JSON: {exc.msg}") from exc
            doc_id, meta = _parse_record(obj, where, {"id", "metadata"})
            ids.append(doc_id)
            metas.append(meta)
    return ids, metas


def write_packed_vectors(path, vectors: np.ndarray) -> None:
    """Write vectors as the packed-binary body (float32 rows after a header)."""
    arr = np.ascontiguousarray(vectors, dtype=np.float32)
    n, dimension = arr.shape
    with open(path, "wb") as fh:
        fh.write(PACKED_HEADER.pack(PACKED_MAGIC, PACKED_FORMAT_VERSION, n, dimension))
        fh.write(arr.tobytes())


def read_packed_header(path) -> tuple:
    """Validate a packed-binary file's header; returns (n, dimension)."""
    path = Path(path)
    size = path.stat().st_size
    if size < PACKED_HEADER.size:
        raise CorpusFormatError(f"{path}: truncated packed-binary file (no header)")
    with open(path, "rb") as fh:
        magic, version, n, dimension = PACKED_HEADER.unpack(fh.read(PACKED_HEADER.size))
    if magic != PACKED_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic {magic!r}, expected {PACKED_MAGIC!r}")
    if version != PACKED_FORMAT_VERSION:
        raise CorpusFormatError(
            f"{path}: packed-binary format version {version} is not supported "
            f"(expected {PACKED_FORMAT_VERSION})"
        )
    if n > 0 and dimension == 0:
        raise CorpusFormatError(f"{path}: dimension 0 is invalid for a nonempty corpus")
    expected = PACKED_HEADER.size + n * dimension * 4
    if size != expected:
        raise CorpusFormatError(
            f"{path}: expected {expected} bytes for n={n}, d={dimension}, found {size}"
        )
    return int(n), int(dimension)


def _load_packed(path: Path) -> Corpus:
    n, dimension = read_packed_header(path)
    with open(path, "rb") as fh:
        fh.seek(PACKED_HEADER.size)
        body = fh.read(n * dimension * 4)
    vectors = np.frombuffer(body, dtype="<f4").reshape(n, dimension).astype(np.float64)
    sidecar = sidecar_path(path)
    if not sidecar.exists():
        raise CorpusFormatError(f"{path}: missing metadata sidecar {sidecar}")
    ids, metas = read_id_metadata_jsonl(sidecar)
    if len(ids) != n:
        raise CorpusFormatError(
            f"{sidecar}: {len(ids)} records for {n} vectors in {path}"
        )
    return Corpus(ids, vectors, metas, dimension=dimension)


def _save_packed(corpus: Corpus, path: Path) -> None:
    write_packed_vectors(path, corpus.vectors)
    write_id_metadata_jsonl(sidecar_path(path), corpus.ids, corpus.metadata)


def load_corpus(path, format: str = "jsonl") -> Corpus:
    """Load a corpus from disk in the named format ("jsonl" or "packed-binary")."""
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"{path}: no such file")
    if format == "jsonl":
        return _load_jsonl(path)
    if format == "packed-binary":
        return _load_packed(path)
    raise ValueError(f"unknown corpus format {format!r}, expected one of {CORPUS_FORMATS}")


def save_corpus(corpus: Corpus, path, format: str = "jsonl") -> None:
    """Write a corpus to disk in the named format ("jsonl" or "packed-binary")."""
    path = Path(path)
    if format == "jsonl":
        _save_jsonl(corpus, path)
    elif format == "packed-binary":
        _save_packed(corpus, path)
    else:
        raise ValueError(f"unknown corpus format {format!r}, expected one of {CORPUS_FORMATS}")
