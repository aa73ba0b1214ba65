"""Open-world evaluation: per-class / weighted / macro F1 with a rejection
class, and the incremental seen-set experiment over synthetic data."""

from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import EmptySeenSet
from .meta_classifier import REJECT, MetaClassifierParams
from .registry import SeenClassSet
from .training import TrainConfig, build_pairs, train

C_REJ = "c_rej"


def _fmt(x):
    return repr(float(x))


@dataclass
class EvalReport:
    per_class_f1: dict
    precision: dict
    recall: dict
    support: dict
    confusion: dict
    weighted_f1: float
    macro_f1: float
    meta: dict = field(default_factory=dict)

    @property
    def classes(self):
        return list(self.per_class_f1)

    def to_text(self):
        lines = ["report:"]
        for key, value in self.meta.items():
            lines.append(f"  {key}: {value}")
        lines.append(f"  weighted_f1: {_fmt(self.weighted_f1)}")
        lines.append(f"  macro_f1: {_fmt(self.macro_f1)}")
        lines.append(f"  total: {sum(self.support.values())}")
        lines.append("  classes:")
        for c in self.classes:
            lines.append(f"    {c}:")
            lines.append(f"      f1: {_fmt(self.per_class_f1[c])}")
            lines.append(f"      precision: {_fmt(self.precision[c])}")
            lines.append(f"      recall: {_fmt(self.recall[c])}")
            lines.append(f"      support: {self.support[c]}")
        return "\n".join(lines) + "\n"

    def flat(self, prefix=""):
        rows = [(f"{prefix}{k}", str(v)) for k, v in self.meta.items()]
        rows += [(f"{prefix}weighted_f1", _fmt(self.weighted_f1)), (f"{prefix}macro_f1", _fmt(self.macro_f1))]
        for c in self.classes:
            rows.append((f"{prefix}f1.{c}", _fmt(self.per_class_f1[c])))
            rows.append((f"{prefix}support.{c}", str(self.support[c])))
        return rows

    def to_flat(self, prefix=""):
        return "".join(f"{k}\t{v}\n" for k, v in self.flat(prefix))

    def confusion_lines(self):
        return "".join(f"{g}\t{p}\t{n}\n" for (g, p), n in sorted(self.confusion.items()))


def weighted_f1(gold, pred, S):
    """Per-class and aggregate F1 over ``S`` plus the rejection class.

    Predictions equal to ``REJECT`` (or ``c_rej``) count as ``c_rej``; gold
    labels must already be in ``S`` or be ``c_rej``.
    """
    gold = [C_REJ if g == REJECT else g for g in gold]
    pred = [C_REJ if p == REJECT else p for p in pred]
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold labels but {len(pred)} predictions")
    classes = sorted(set(S) - {C_REJ}) + [C_REJ]
    allowed = set(classes)
    for lab in gold:
        if lab not in allowed:
            raise ValueError(f"gold label {lab!r} is neither seen nor {C_REJ}")
    for lab in pred:
        if lab not in allowed:
            raise ValueError(f"prediction {lab!r} is neither seen nor {C_REJ}")

    confusion = Counter(zip(gold, pred))
    support = Counter(gold)
    predicted = Counter(pred)
    f1, prec, rec = {}, {}, {}
    for c in classes:
        tp = confusion.get((c, c), 0)
        p = tp / predicted[c] if predicted[c] else 0.0
        r = tp / support[c] if support[c] else 0.0
        prec[c], rec[c] = p, r
        f1[c] = 2 * p * r / (p + r) if p + r > 0 else 0.0
    total = len(gold)
    wf1 = sum(support[c] * f1[c] for c in classes) / total if total else 0.0
    mf1 = sum(f1.values()) / len(classes)
    return EvalReport(f1, prec, rec, {c: support[c] for c in classes}, dict(confusion), wf1, mf1)


# --------------------------------------------------------------------------
# experiment


@dataclass(frozen=True)
class ExperimentPlan:
    meta_classes: tuple
    val_classes: tuple
    test_classes: tuple
    seen_sizes: tuple
    k: int = 5
    n: int = 9
    seeds: tuple = (0,)
    stored_per_class: int = 25

    def __post_init__(self):
        for name in ("meta_classes", "val_classes", "test_classes", "seen_sizes", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        sets = [set(self.meta_classes), set(self.val_classes), set(self.test_classes)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("meta, validation and test classes must be pairwise disjoint")
        for s in self.seen_sizes:
            if s < 1:
                raise EmptySeenSet(f"seen size {s} leaves the seen-class set empty")
            if s > len(self.test_classes):
                raise ValueError(f"seen size {s} exceeds {len(self.test_classes)} test classes")

    @classmethod
    def split(cls, labels, n_meta, n_val, n_test, **kw):
        labels = list(labels)
        if n_meta + n_val + n_test > len(labels):
            raise ValueError("not enough classes for the requested split")
        return cls(labels[:n_meta], labels[n_meta : n_meta + n_val],
                   labels[n_meta + n_val : n_meta + n_val + n_test], **kw)


def split_test_classes(data: EmbeddingMatrix, test_classes, stored_per_class):
    """First ``stored_per_class`` rows of each test class are stored, the rest held out."""
    stored, held = [], []
    for label in test_classes:
        rows = data.rows_of(label).tolist()
        if len(rows) <= stored_per_class:
            raise ValueError(f"class {label!r} has {len(rows)} rows; need more than {stored_per_class}")
        stored += rows[:stored_per_class]
        held += rows[stored_per_class:]
    return data.subset(stored), data.subset(held)


def validation_negatives(plan):
    # validation pairs reuse n, capped by how many other validation classes exist
    return min(plan.n, len(plan.val_classes) - 1)


def prepare_pairs(plan: ExperimentPlan, data: EmbeddingMatrix):
    train_pairs = build_pairs(data, plan.meta_classes, plan.k, plan.n)
    val_pairs = build_pairs(data, plan.val_classes, plan.k, validation_negatives(plan))
    return train_pairs, val_pairs


def build_registry(stored: EmbeddingMatrix, labels):
    reg = SeenClassSet(stored.dim)
    for label in labels:
        reg.add_class(label, stored.subset(stored.rows_of(label)))
    return reg


def _threads():
    try:
        return max(1, int(os.environ.get("L2AC_THREADS", "1")))
    except ValueError:
        return 1


def classify_all(registry: SeenClassSet, params: MetaClassifierParams, inputs: EmbeddingMatrix, k=None, vote=None):
    def one(row):
        return registry.classify(inputs.vectors[row], params, k, vote)

    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(len(inputs))))
    return [one(r) for r in range(len(inputs))]


def evaluate(params, registry: SeenClassSet, heldout: EmbeddingMatrix, k=None, vote=None):
    """Classify every held-out row; gold labels outside the registry become ``c_rej``."""
    predictions = classify_all(registry, params, heldout, k, vote)
    gold = [lab if lab in registry else C_REJ for lab in heldout.labels]
    report = weighted_f1(gold, [p.outcome for p in predictions], registry.labels)
    return report, predictions


def run_openworld_experiment(plan: ExperimentPlan, data: EmbeddingMatrix, cfg: TrainConfig,
                             vote=None, pairs=None, on_trained=None):
    """Train once per seed, then score every seen size with the same parameters.

    Returns one report per (seed, seen size), seed-major.
    """
    cfg = cfg.replace(k=plan.k, n=plan.n)
    train_pairs, val_pairs = pairs if pairs is not None else prepare_pairs(plan, data)
    stored, heldout = split_test_classes(data, plan.test_classes, plan.stored_per_class)
    reports = []
    for seed in plan.seeds:
        history = []
        params = train(train_pairs, val_pairs, cfg.replace(seed=seed), data, history=history)
        if on_trained is not None:
            on_trained(seed, params, history)
        digest = params.digest()
        for size in plan.seen_sizes:
            registry = build_registry(stored, plan.test_classes[:size])
            report, _ = evaluate(params, registry, heldout, vote=vote)
            report.meta.update({"seed": seed, "seen_size": size, "model_sha256": digest})
            reports.append(report)
    return reports


def summarize(reports):
    """Mean and standard deviation of both F1 scores per seen size."""
    by_size = {}
    for r in reports:
        by_size.setdefault(r.meta.get("seen_size"), []).append(r)
    out = {}
    for size, group in by_size.items():
        w = np.array([r.weighted_f1 for r in group])
        m = np.array([r.macro_f1 for r in group])
        out[size] = {"weighted_f1": float(w.mean()), "weighted_f1_std": float(w.std()),
                     "macro_f1": float(m.mean()), "macro_f1_std": float(m.std()), "runs": len(group)}
    return out
