"""Meta-training: pair construction over meta-training classes, weighted BCE
with Adam, and model selection on validation classes."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .embeddings import EmbeddingMatrix
from .errors import ClassTooSmall, InsufficientClasses, TrainingDiverged
from .meta_classifier import SIM_MODES, MetaClassifierParams, forward, loss_and_grads
from .ranker import ClassIndex, _normalise_rows, topk_rows_batch

log = logging.getLogger(__name__)

EVAL_CHUNK = 4096


@dataclass(frozen=True)
class TrainingPair:
    query_row: int
    neighbor_rows: tuple
    label: int
    weight: float


@dataclass(frozen=True)
class ClassPartition:
    meta_train: frozenset
    validation: frozenset

    def __post_init__(self):
        object.__setattr__(self, "meta_train", frozenset(self.meta_train))
        object.__setattr__(self, "validation", frozenset(self.validation))
        overlap = self.meta_train & self.validation
        if overlap:
            raise ValueError(f"meta-training and validation classes overlap: {sorted(overlap)}")


@dataclass(frozen=True)
class TrainConfig:
    k: int = 5
    n: int = 9
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    hidden: int = 512
    sim: str = "abssub_sum"

    def __post_init__(self):
        for name in ("k", "n", "batch_size", "patience", "max_epochs", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sim not in SIM_MODES:
            raise ValueError(f"sim must be one of {SIM_MODES}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text, path=None):
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path or '<config>'}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in fields:
                raise ValueError(f"{path or '<config>'}:{lineno}: unknown key {key!r}")
            kind = fields[key]
            try:
                values[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
            except ValueError:
                raise ValueError(f"{path or '<config>'}:{lineno}: bad value for {key}: {value!r}") from None
        return cls(**values)

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"), path=str(path))


# --------------------------------------------------------------------------
# pairs


def build_pairs(m: EmbeddingMatrix, classes, k, n):
    """One positive and ``n`` negative pairs for every example of ``classes``.

    The positive pair holds the query's top-k classmates (the query itself
    excluded); each negative pair holds the top-k members of one of the
    ``n`` classes whose class vector is closest to the query. Positives
    weigh ``n``, negatives 1.
    """
    classes = sorted(set(classes))
    idx = ClassIndex.from_matrix(m, classes)
    for label in classes:
        if idx.rows(label).size < 2:
            raise ClassTooSmall(label, int(idx.rows(label).size))
    if len(classes) < n + 1:
        raise InsufficientClasses(f"{len(classes)} classes cannot supply {n} negatives per query")

    centroids = _normalise_rows(np.stack([idx.class_vectors[c] for c in classes]))
    pos = {c: i for i, c in enumerate(classes)}

    # neighbours of every query row inside every class
    query_rows = np.concatenate([idx.rows(c) for c in classes])
    qpos = {int(r): j for j, r in enumerate(query_rows)}
    Q = m.vectors[query_rows]
    neigh = {}
    for c in classes:
        neigh[c] = topk_rows_batch(Q, idx.rows(c), m, k, exclude_rows=query_rows)
    class_sims = _normalise_rows(Q) @ centroids.T

    pairs = []
    for c in classes:
        for qrow in idx.rows(c):
            j = qpos[int(qrow)]
            nb, ln = neigh[c]
            pairs.append(TrainingPair(int(qrow), tuple(int(r) for r in nb[j, : ln[j]]), 1, float(n)))
            ranked = sorted((lab for lab in classes if lab != c),
                            key=lambda lab: (-class_sims[j, pos[lab]], lab))
            for neg in ranked[:n]:
                nb, ln = neigh[neg]
                pairs.append(TrainingPair(int(qrow), tuple(int(r) for r in nb[j, : ln[j]]), 0, 1.0))
    return pairs


@dataclass
class PairArrays:
    X: np.ndarray
    A: np.ndarray
    lengths: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __len__(self):
        return len(self.y)

    def take(self, idx):
        return PairArrays(self.X[idx], self.A[idx], self.lengths[idx], self.y[idx], self.w[idx])

    @classmethod
    def from_pairs(cls, pairs, m: EmbeddingMatrix, k):
        P = len(pairs)
        nbr = np.zeros((P, k), dtype=np.int64)
        lengths = np.empty(P, dtype=np.int64)
        for j, pair in enumerate(pairs):
            L = len(pair.neighbor_rows)
            if not 1 <= L <= k:
                raise ValueError(f"pair {j} has {L} neighbours, expected 1..{k}")
            nbr[j, :L] = pair.neighbor_rows
            nbr[j, L:] = pair.neighbor_rows[0]
            lengths[j] = L
        q = np.array([p.query_row for p in pairs], dtype=np.int64)
        return cls(m.vectors[q], m.vectors[nbr], lengths,
                   np.array([p.label for p in pairs], dtype=np.float64),
                   np.array([p.weight for p in pairs], dtype=np.float64))


# --------------------------------------------------------------------------
# training


def _mean_loss(params, arr: PairArrays):
    total = 0.0
    for start in range(0, len(arr), EVAL_CHUNK):
        part = arr.take(slice(start, start + EVAL_CHUNK))
        p, _, _ = forward(params, part.X, part.A, part.lengths)
        losses, _ = nk.weighted_bce_loss(p, part.y, part.w)
        total += float(losses.sum())
    return total / len(arr)


def validation_loss(params: MetaClassifierParams, val_pairs, m: EmbeddingMatrix):
    """Mean weighted BCE over ``val_pairs``; no side effects."""
    if not val_pairs:
        raise ValueError("val_pairs is empty")
    return _mean_loss(params, PairArrays.from_pairs(val_pairs, m, params.k))


def train(pairs, val_pairs, cfg: TrainConfig, m: EmbeddingMatrix, history=None):
    """Adam on mean weighted BCE; returns the snapshot with the lowest
    validation loss. Per-epoch records are appended to ``history`` if given."""
    if not pairs or not val_pairs:
        raise ValueError("training and validation pairs must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    params = MetaClassifierParams.init(m.dim, cfg.k, cfg.hidden, cfg.sim, rng=rng)
    train_arr = PairArrays.from_pairs(pairs, m, cfg.k)
    val_arr = PairArrays.from_pairs(val_pairs, m, cfg.k)

    best, best_loss, stale = params.copy(), _mean_loss(params, val_arr), 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(train_arr))
        total = 0.0
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            batch = train_arr.take(perm[start : start + cfg.batch_size])
            loss, grads = loss_and_grads(params, batch.X, batch.A, batch.lengths, batch.y, batch.w)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, b, loss)
            total += loss * len(batch)
            params.store.set_grads(grads)
            nk.adam_step(params.store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        train_loss = total / len(train_arr)
        val = _mean_loss(params, val_arr)
        if not math.isfinite(val):
            raise TrainingDiverged(epoch, -1, val)
        improved = val < best_loss
        if improved:
            best, best_loss, stale = params.copy(), val, 0
        else:
            stale += 1
        if history is not None:
            history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val, "best_val_loss": best_loss})
        log.debug("epoch %d train %.5f val %.5f%s", epoch, train_loss, val, " *" if improved else "")
        if stale >= cfg.patience:
            break
    return best
