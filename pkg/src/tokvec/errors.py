"""Exception types shared across the package.

Data and file contract violations raise a TokvecError subclass so callers
(notably the CLI and the HTTP service) can map them to exit codes and
status codes without pattern-matching on messages. Plain ValueError is
reserved for programmer errors such as invalid parameters.
"""
from __future__ import annotations


class TokvecError(Exception):
    """Base class for contract violations raised by this package."""


class CorpusFormatError(TokvecError):
    """A corpus file (JSONL or packed-binary) violates the format contract."""


class CodebookFormatError(TokvecError):
    """A codebook JSON file is malformed, truncated, or of an unknown version."""


class SnapshotError(TokvecError):
    """An index snapshot directory is incomplete, corrupt, or incompatible."""


class DimensionMismatchError(TokvecError):
    """A vector's dimensionality does not match what the receiver expects."""

    def __init__(self, expected: int, got: int, context: str = "vector"):
        self.expected = int(expected)
        self.got = int(got)
        super().__init__(
            f"{context} has dimension {got}, expected {expected}"
        )


class UnknownFilterFieldError(TokvecError):
    """A filter references a metadata field the index has never seen."""

    def __init__(self, field: str, detail: str):
        self.field = field
        super().__init__(f"unknown filter field {field!r}: {detail}")
