"""Cosine retrieval: top-k members of a class, and hardest negative classes."""

from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import InsufficientClasses, ShapeError, UnknownClass, ZeroVector


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine of shapes {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_to_rows(query, vectors):
    """Cosine between one query and each row of ``vectors``."""
    query = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(query)
    norms = np.linalg.norm(vectors, axis=1)
    if qn == 0 or np.any(norms == 0):
        raise ZeroVector("cosine is undefined for a zero vector")
    return (vectors @ query) / (norms * qn)


def _normalise_rows(vectors):
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("cosine is undefined for a zero vector")
    return vectors / norms


class ClassIndex:
    """Class label -> member rows of an embedding matrix, with cached class vectors.

    Member rows are kept in ascending order; retrieval ties resolve towards
    the lower row.
    """

    def __init__(self):
        self.members: dict[str, np.ndarray] = {}
        self.class_vectors: dict[str, np.ndarray] = {}

    @classmethod
    def from_matrix(cls, m: EmbeddingMatrix, classes=None):
        idx = cls()
        wanted = None if classes is None else set(classes)
        grouped: dict[str, list[int]] = {}
        for row, label in enumerate(m.labels):
            if wanted is None or label in wanted:
                grouped.setdefault(label, []).append(row)
        if wanted is not None:
            missing = wanted - grouped.keys()
            if missing:
                raise UnknownClass(sorted(missing)[0])
        for label, rows in grouped.items():
            idx.add(label, rows, m)
        return idx

    def add(self, label, rows, m: EmbeddingMatrix):
        rows = np.array(sorted(rows), dtype=np.int64)
        if rows.size == 0:
            raise ValueError(f"class {label!r} needs at least one member")
        self.members[label] = rows
        self.class_vectors[label] = m.vectors[rows].mean(axis=0)

    def remove(self, label):
        if label not in self.members:
            raise UnknownClass(label)
        del self.members[label]
        del self.class_vectors[label]

    @property
    def labels(self):
        return sorted(self.members)

    def __contains__(self, label):
        return label in self.members

    def __len__(self):
        return len(self.members)

    def rows(self, label):
        try:
            return self.members[label]
        except KeyError:
            raise UnknownClass(label) from None


def topk_in_class(query, label, k, idx: ClassIndex, m: EmbeddingMatrix, exclude=None):
    """Row indices of the ``k`` members of ``label`` most cosine-similar to ``query``.

    ``exclude`` is an example id dropped before ranking (used when the query
    is itself stored). Fewer than ``k`` rows come back for small classes.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    rows = idx.rows(label)
    if exclude is not None:
        rows = rows[[m.ids[r] != exclude for r in rows]]
    if rows.size == 0:
        return []
    sims = cosine_to_rows(query, m.vectors[rows])
    order = np.argsort(-sims, kind="stable")
    return rows[order[:k]].tolist()


def topk_rows_batch(queries, rows, m: EmbeddingMatrix, k, exclude_rows=None):
    """Batched :func:`topk_in_class` over one class for many queries.

    ``exclude_rows[j]`` (or -1) is a row removed from query ``j``'s
    candidates. Returns an ``(n_queries, k)`` array padded with -1 plus the
    per-query lengths.
    """
    q = _normalise_rows(np.asarray(queries, dtype=np.float64))
    members = _normalise_rows(m.vectors[rows])
    sims = q @ members.T
    if exclude_rows is not None:
        hit = rows[None, :] == np.asarray(exclude_rows)[:, None]
        sims = np.where(hit, -np.inf, sims)
        avail = rows.size - hit.sum(axis=1)
    else:
        avail = np.full(q.shape[0], rows.size)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    out = rows[order]
    lengths = np.minimum(avail, k)
    out = np.where(np.arange(out.shape[1])[None, :] < lengths[:, None], out, -1)
    if out.shape[1] < k:
        out = np.pad(out, ((0, 0), (0, k - out.shape[1])), constant_values=-1)
    return out, lengths


def rank_negative_classes(query, own_class, n, idx: ClassIndex):
    """The ``n`` classes other than ``own_class`` whose class vector is
    closest (cosine) to ``query``; ties go to the smaller label."""
    others = [lab for lab in idx.labels if lab != own_class]
    if len(others) < n:
        raise InsufficientClasses(f"need {n} negative classes, only {len(others)} available")
    vecs = np.stack([idx.class_vectors[lab] for lab in others])
    sims = cosine_to_rows(query, vecs)
    ranked = sorted(zip(others, sims), key=lambda t: (-t[1], t[0]))
    return [lab for lab, _ in ranked[:n]]
