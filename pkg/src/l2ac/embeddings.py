"""Example memory: encoded examples with their class labels, plus encoders.

File format (UTF-8)::

    #l2ac-emb v1 dim=<D>
    <id>\\t<class_label>\\t<v1> <v2> ... <vD>

Blank lines are skipped and later lines starting with ``#`` are comments.
Floats are written with ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDocument, FormatError, ParseError, ShapeError, UnsupportedEncoder

HEADER_RE = re.compile(r"^#l2ac-emb v1 dim=(\d+)\s*$")


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    class_label: str
    vector: tuple

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.vector):
            raise ValueError(f"example {self.id!r} has non-finite values")


class EmbeddingMatrix:
    """Row-indexed memory of encoded examples.

    Treat instances as immutable; the methods that change membership return a
    new matrix.
    """

    def __init__(self, dim, ids, labels, vectors):
        vectors = np.array(vectors, dtype=np.float64).reshape(len(ids), dim)
        if len(labels) != len(ids):
            raise ShapeError(f"{len(ids)} ids but {len(labels)} labels")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        index = {}
        for row, ex_id in enumerate(ids):
            if ex_id in index:
                raise ValueError(f"duplicate example id {ex_id!r}")
            index[ex_id] = row
        self.dim = int(dim)
        self.ids = list(ids)
        self.labels = list(labels)
        self.vectors = vectors
        self.vectors.flags.writeable = False
        self.index = index

    @classmethod
    def empty(cls, dim):
        return cls(dim, [], [], np.zeros((0, dim)))

    @classmethod
    def from_records(cls, records, dim=None):
        records = list(records)
        if dim is None:
            if not records:
                raise ValueError("dim is required for an empty record list")
            dim = len(records[0].vector)
        for r in records:
            if len(r.vector) != dim:
                raise ShapeError(f"example {r.id!r} has {len(r.vector)} values, expected {dim}")
        return cls(dim, [r.id for r in records], [r.class_label for r in records],
                   [r.vector for r in records])

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (self.dim == other.dim and self.ids == other.ids and self.labels == other.labels
                and self.vectors.tobytes() == other.vectors.tobytes())

    def __repr__(self):
        return f"EmbeddingMatrix(rows={len(self)}, dim={self.dim})"

    @property
    def rows(self):
        return [self.record(i) for i in range(len(self))]

    def record(self, row):
        return ExampleRecord(self.ids[row], self.labels[row], tuple(float(v) for v in self.vectors[row]))

    def class_labels(self):
        """Distinct labels in order of first appearance."""
        return list(dict.fromkeys(self.labels))

    def rows_of(self, label):
        return np.array([i for i, lab in enumerate(self.labels) if lab == label], dtype=np.int64)

    def subset(self, rows):
        rows = list(rows)
        return EmbeddingMatrix(self.dim, [self.ids[r] for r in rows], [self.labels[r] for r in rows],
                               self.vectors[rows] if rows else np.zeros((0, self.dim)))

    def select_classes(self, labels):
        wanted = set(labels)
        return self.subset([i for i, lab in enumerate(self.labels) if lab in wanted])

    def concat(self, other):
        if other.dim != self.dim:
            raise ShapeError(f"cannot concatenate dim {other.dim} onto dim {self.dim}")
        return EmbeddingMatrix(self.dim, self.ids + other.ids, self.labels + other.labels,
                               np.concatenate([self.vectors, other.vectors]))

    def relabel(self, label):
        return EmbeddingMatrix(self.dim, self.ids, [label] * len(self), self.vectors)


def lookup(m: EmbeddingMatrix, row_indices):
    """Vectors for ``row_indices`` in the order given."""
    out = []
    for r in row_indices:
        if not 0 <= r < len(m):
            raise IndexError(f"row {r} out of range for {len(m)} rows")
        out.append(m.vectors[r])
    return out


def _check_field(value, what):
    if not value or "\t" in value or "\n" in value:
        raise ValueError(f"{what} must be non-empty and free of tabs/newlines: {value!r}")


def format_embeddings(m: EmbeddingMatrix):
    lines = [f"#l2ac-emb v1 dim={m.dim}"]
    for ex_id, label, vec in zip(m.ids, m.labels, m.vectors):
        _check_field(ex_id, "example id")
        _check_field(label, "class label")
        lines.append(f"{ex_id}\t{label}\t" + " ".join(repr(float(v)) for v in vec))
    return "\n".join(lines) + "\n"


def save_embeddings(m: EmbeddingMatrix, path):
    Path(path).write_text(format_embeddings(m), encoding="utf-8")


def parse_embeddings(text, path=None):
    lines = text.splitlines()
    if not lines:
        raise ParseError("missing header", path, 1)
    match = HEADER_RE.match(lines[0])
    if not match:
        raise ParseError(f"bad header {lines[0]!r}", path, 1)
    dim = int(match.group(1))
    if dim < 1:
        raise FormatError("dim must be positive", path, 1)
    ids, labels, vectors = [], [], []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", path, lineno)
        ex_id, label, values = parts
        if not ex_id or not label:
            raise ParseError("empty id or label", path, lineno)
        if ex_id in seen:
            raise ParseError(f"duplicate example id {ex_id!r}", path, lineno)
        try:
            vec = [float(tok) for tok in values.split()]
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", path, lineno) from None
        if len(vec) != dim:
            raise FormatError(f"row has {len(vec)} values but header says dim={dim}", path, lineno)
        if not all(math.isfinite(v) for v in vec):
            raise ParseError("non-finite value", path, lineno)
        seen.add(ex_id)
        ids.append(ex_id)
        labels.append(label)
        vectors.append(vec)
    return EmbeddingMatrix(dim, ids, labels, np.array(vectors).reshape(len(ids), dim))


def load_embeddings(path):
    return parse_embeddings(Path(path).read_text(encoding="utf-8"), path=str(path))


# --------------------------------------------------------------------------
# encoders


@dataclass(frozen=True)
class Encoder:
    """A frozen g(x). ``feature-hash`` encodes tokens; ``precomputed`` only
    marks that vectors arrive through embedding files."""

    kind: str = "feature-hash"
    dim: int = 256
    seed: int = 0
    _key: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("feature-hash", "precomputed"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        object.__setattr__(self, "_key", int(self.seed).to_bytes(8, "little", signed=True))


def tokenize(text):
    return text.split()


def _bucket(token, enc: Encoder):
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=enc._key).digest()
    return int.from_bytes(digest, "little") % enc.dim


def encode(doc, enc: Encoder):
    """Hash each token into one of ``enc.dim`` buckets, count, L2-normalise."""
    if enc.kind == "precomputed":
        raise UnsupportedEncoder("precomputed encoders cannot encode documents; load vectors from a file")
    if isinstance(doc, str):
        doc = tokenize(doc)
    if len(doc) == 0:
        raise EmptyDocument("cannot encode an empty document")
    vec = np.zeros(enc.dim)
    for tok in doc:
        vec[_bucket(tok, enc)] += 1.0
    return vec / np.linalg.norm(vec)


def encode_corpus(docs, enc: Encoder):
    """Encode ``(id, label, doc)`` triples into an :class:`EmbeddingMatrix`."""
    ids, labels, vectors = [], [], []
    for ex_id, label, doc in docs:
        ids.append(ex_id)
        labels.append(label)
        vectors.append(encode(doc, enc))
    return EmbeddingMatrix(enc.dim, ids, labels, np.array(vectors).reshape(len(ids), enc.dim))
