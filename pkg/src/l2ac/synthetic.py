"""Gaussian-cluster stand-in data: unit-norm class means plus isotropic noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    per_class: int
    dim: int
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.per_class < 1 or self.dim < 1:
            raise ValueError("num_classes, per_class and dim must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def labels(self):
        width = len(str(self.num_classes - 1))
        return [f"c{j:0{width}d}" for j in range(self.num_classes)]


def _draw_means(spec, rng):
    means = rng.standard_normal((spec.num_classes, spec.dim))
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def class_means(spec: SyntheticSpec):
    """The class means :func:`gen_synthetic` uses for ``spec``, keyed by label."""
    means = _draw_means(spec, np.random.default_rng(spec.seed))
    return dict(zip(spec.labels(), means))


def gen_synthetic(spec: SyntheticSpec):
    rng = np.random.default_rng(spec.seed)
    means = _draw_means(spec, rng)
    ids, labels, vectors = [], [], []
    for label, mean in zip(spec.labels(), means):
        pts = mean + spec.sigma * rng.standard_normal((spec.per_class, spec.dim))
        for i, v in enumerate(pts):
            ids.append(f"{label}-{i}")
            labels.append(label)
            vectors.append(v)
    return EmbeddingMatrix(spec.dim, ids, labels, np.array(vectors))


def far_probes(means, min_dist, count, seed=0, label="probe"):
    """``count`` points at distance >= ``min_dist`` from every mean.

    Directions are uniform; radii are drawn just beyond the nearest
    admissible shell and redrawn until the distance condition holds.
    """
    means = np.asarray(list(means.values()) if isinstance(means, dict) else means, dtype=np.float64)
    rng = np.random.default_rng(seed)
    dim = means.shape[1]
    radius = np.linalg.norm(means, axis=1).max() + min_dist
    out = []
    while len(out) < count:
        d = rng.standard_normal(dim)
        p = d / np.linalg.norm(d) * rng.uniform(radius * 0.75, radius * 1.5)
        if np.linalg.norm(means - p, axis=1).min() >= min_dist:
            out.append(p)
    return EmbeddingMatrix(dim, [f"{label}-{i}" for i in range(count)], [label] * count, np.array(out))
