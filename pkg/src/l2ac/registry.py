"""The dynamic seen-class set: add/remove classes at run time, classify with rejection.

Nothing here touches model parameters; growing or shrinking the set is pure
bookkeeping over stored example vectors.

Manifest format::

    #l2ac-registry v1
    <label>\\t<embedding-file-path>

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .embeddings import EmbeddingMatrix, load_embeddings, save_embeddings
from .errors import DuplicateClass, EmptySeenSet, ParseError, ShapeError, UnknownClass
from .meta_classifier import REJECT, THRESHOLD, MetaClassifierParams, decide
from .ranker import ClassIndex, topk_in_class

MANIFEST_HEADER = "#l2ac-registry v1"


@dataclass(frozen=True)
class Prediction:
    outcome: str
    scores: dict = field(default_factory=dict)
    k_used: int = 0

    @property
    def rejected(self):
        return self.outcome == REJECT

    def ranked(self):
        return sorted(self.scores.items(), key=lambda t: (-t[1], t[0]))


class SeenClassSet:
    """Seen classes S with their stored examples.

    ``order`` keeps insertion order (what callers mean by "the first s
    classes"); ``labels`` is sorted, which is the order decisions use.
    """

    def __init__(self, dim):
        self.dim = int(dim)
        self.matrix = EmbeddingMatrix.empty(dim)
        self.index = ClassIndex()
        self.order: list[str] = []
        self.generation = 0
        self._lock = threading.Lock()

    @property
    def labels(self):
        return self.index.labels

    def __len__(self):
        return len(self.index)

    def __contains__(self, label):
        return label in self.index

    def members(self, label):
        return self.matrix.subset(self.index.rows(label))

    def add_class(self, label, examples):
        """Register ``label`` with ``examples`` (an EmbeddingMatrix or records)."""
        if not isinstance(examples, EmbeddingMatrix):
            examples = list(examples)
            if not examples:
                raise ValueError(f"class {label!r} needs at least one example")
            examples = EmbeddingMatrix.from_records(examples)
        if len(examples) == 0:
            raise ValueError(f"class {label!r} needs at least one example")
        if examples.dim != self.dim:
            raise ShapeError(f"examples have dim {examples.dim}, registry has dim {self.dim}")
        with self._lock:
            if label in self.index:
                raise DuplicateClass(f"class {label!r} is already registered")
            start = len(self.matrix)
            matrix = self.matrix.concat(examples.relabel(label))
            self.index.add(label, range(start, len(matrix)), matrix)
            self.matrix = matrix
            self.order.append(label)
            self.generation += 1

    def remove_class(self, label):
        with self._lock:
            if label not in self.index:
                raise UnknownClass(label)
            self.index.remove(label)
            # compact, keeping the relative order of the remaining rows
            keep = [r for r, lab in enumerate(self.matrix.labels) if lab != label]
            remap = {old: new for new, old in enumerate(keep)}
            self.matrix = self.matrix.subset(keep)
            for other in list(self.index.members):
                rows = [remap[int(r)] for r in self.index.members[other]]
                self.index.add(other, rows, self.matrix)
            self.order.remove(label)
            self.generation += 1

    def neighbors(self, query, label, k):
        return self.matrix.vectors[topk_in_class(query, label, k, self.index, self.matrix)]

    def classify(self, x, params: MetaClassifierParams, k=None, vote=None):
        if not len(self):
            raise EmptySeenSet("the seen-class set is empty")
        k = params.k if k is None else k
        outcome, scores = decide(x, self, params, k, vote=vote)
        return Prediction(outcome, scores, k)

    # ---------------------------------------------------------------- io

    def save(self, manifest_path):
        """Write one embedding snapshot plus a manifest pointing at it."""
        manifest_path = Path(manifest_path)
        snapshot = manifest_path.with_name(f"{manifest_path.stem}.gen{self.generation}.emb")
        ordered = self.matrix.subset([r for lab in self.order for r in self.index.rows(lab)]) \
            if self.order else self.matrix
        save_embeddings(ordered, snapshot)
        lines = [MANIFEST_HEADER, f"# generation={self.generation} dim={self.dim}"]
        lines += [f"{lab}\t{snapshot.name}" for lab in self.order]
        tmp = manifest_path.with_name(manifest_path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        old = _snapshot_paths(manifest_path) if manifest_path.exists() else set()
        os.replace(tmp, manifest_path)
        for path in old - {snapshot}:
            if path.name.startswith(f"{manifest_path.stem}.gen") and path.exists():
                path.unlink()

    @classmethod
    def load(cls, manifest_path, dim=None):
        manifest_path = Path(manifest_path)
        entries, meta = _read_manifest(manifest_path)
        files = {}
        reg = None
        for label, path in entries:
            if path not in files:
                files[path] = load_embeddings(path)
            m = files[path]
            if reg is None:
                reg = cls(m.dim)
            reg.add_class(label, m.subset(m.rows_of(label)))
        if reg is None:
            dim = dim if dim is not None else meta.get("dim")
            if dim is None:
                raise ParseError("empty registry without a recorded dim", str(manifest_path))
            reg = cls(int(dim))
        if "generation" in meta:
            reg.generation = int(meta["generation"])
        return reg


def _read_manifest(manifest_path):
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ParseError("missing '#l2ac-registry v1' header", str(manifest_path), 1)
    entries, meta = [], {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, value = tok.split("=", 1)
                    meta[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError("expected '<label>\\t<embedding-file-path>'", str(manifest_path), lineno)
        path = Path(parts[1])
        if not path.is_absolute():
            path = manifest_path.parent / path
        entries.append((parts[0], path))
    return entries, meta


def _snapshot_paths(manifest_path):
    try:
        entries, _ = _read_manifest(manifest_path)
    except (OSError, ParseError):
        return set()
    return {p for _, p in entries}


def add_class(S: SeenClassSet, label, examples):
    S.add_class(label, examples)


def remove_class(S: SeenClassSet, label):
    S.remove_class(label)


def classify(S: SeenClassSet, x, params, k=None, vote=None):
    return S.classify(x, params, k, vote)


__all__ = ["Prediction", "SeenClassSet", "add_class", "remove_class", "classify", "REJECT", "THRESHOLD"]
