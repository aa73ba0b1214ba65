import math

import numpy as np
import pytest

from l2ac.embeddings import EmbeddingMatrix
from l2ac.errors import ClassTooSmall, InsufficientClasses
from l2ac.meta_classifier import MetaClassifierParams
from l2ac.synthetic import SyntheticSpec, gen_synthetic
from l2ac.training import (
    ClassPartition,
    PairArrays,
    TrainConfig,
    build_pairs,
    train,
    validation_loss,
)


def small(num_classes=3, per_class=4, dim=4, sigma=0.1, seed=0):
    return gen_synthetic(SyntheticSpec(num_classes, per_class, dim, sigma, seed))


def test_pair_counts_and_weights():
    m = small()
    pairs = build_pairs(m, m.class_labels(), k=2, n=2)
    assert len(pairs) == 36
    assert sum(p.label for p in pairs) == 12
    for p in pairs:
        assert p.weight == (2.0 if p.label == 1 else 1.0)
        assert 1 <= len(p.neighbor_rows) <= 2


def test_positive_pairs_exclude_query_and_stay_in_class():
    m = small(num_classes=4, per_class=6)
    for p in build_pairs(m, m.class_labels(), k=5, n=3):
        own = m.labels[p.query_row]
        labels = {m.labels[r] for r in p.neighbor_rows}
        if p.label == 1:
            assert p.query_row not in p.neighbor_rows
            assert labels == {own}
            assert len(p.neighbor_rows) == 5
        else:
            assert len(labels) == 1 and own not in labels


def test_pair_layout_per_query():
    m = small(num_classes=5, per_class=3)
    n = 3
    pairs = build_pairs(m, m.class_labels(), k=2, n=n)
    assert len(pairs) == (n + 1) * len(m)
    for start in range(0, len(pairs), n + 1):
        group = pairs[start : start + n + 1]
        assert [p.label for p in group] == [1] + [0] * n
        assert len({p.query_row for p in group}) == 1
        negs = [m.labels[p.neighbor_rows[0]] for p in group[1:]]
        assert len(set(negs)) == n


def test_pairs_depend_only_on_listed_classes():
    m = small(num_classes=6, per_class=4)
    a = build_pairs(m, ["c0", "c1", "c2"], k=3, n=2)
    b = build_pairs(m, ["c2", "c0", "c1"], k=3, n=2)
    assert a == b
    used = {m.labels[r] for p in a for r in (p.query_row,) + p.neighbor_rows}
    assert used == {"c0", "c1", "c2"}


def test_pair_errors():
    m = small()
    with pytest.raises(InsufficientClasses):
        build_pairs(m, m.class_labels(), k=2, n=3)
    tiny = EmbeddingMatrix(2, ["a", "b", "c"], ["x", "x", "y"], np.eye(3, 2) + 0.1)
    with pytest.raises(ClassTooSmall) as info:
        build_pairs(tiny, ["x", "y"], k=1, n=1)
    assert info.value.label == "y"


def test_partition_disjoint():
    ClassPartition({"a", "b"}, {"c"})
    with pytest.raises(ValueError):
        ClassPartition({"a", "b"}, {"b"})


def test_config_text_round_trip(tmp_path):
    cfg = TrainConfig(k=3, n=4, lr=5e-4, hidden=32, sim="abssub")
    path = tmp_path / "c.cfg"
    path.write_text("# comment\n" + cfg.to_text() + "\n")
    assert TrainConfig.load(path) == cfg


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ValueError, match="unknown key"):
        TrainConfig.from_text("k = 3\ndropout = 0.5\n")
    with pytest.raises(ValueError):
        TrainConfig.from_text("k = three\n")
    with pytest.raises(ValueError):
        TrainConfig.from_text("sim = cosine\n")
    with pytest.raises(ValueError):
        TrainConfig(k=0)


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.k, cfg.n, cfg.batch_size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps) == (5, 9, 256, 1e-3, 0.9, 0.999, 1e-8)
    assert (cfg.max_epochs, cfg.patience) == (200, 10)


def test_validation_loss_at_zero_params_is_weighted_ln2():
    m = small(num_classes=4)
    pairs = build_pairs(m, m.class_labels(), k=2, n=2)
    params = MetaClassifierParams.zeros(m.dim, 2, 3)
    w = np.array([p.weight for p in pairs])
    assert validation_loss(params, pairs, m) == pytest.approx(w.mean() * math.log(2), rel=1e-12)


def test_pair_arrays_padding():
    m = small()
    pairs = build_pairs(m, m.class_labels(), k=2, n=2)
    arr = PairArrays.from_pairs(pairs, m, k=5)
    assert arr.A.shape == (36, 5, 4)
    assert np.all(arr.lengths <= 3)


def _fit(seed=0, **kw):
    m = small(num_classes=8, per_class=6, dim=6, sigma=0.2, seed=3)
    labels = m.class_labels()
    tr = build_pairs(m, labels[:5], k=3, n=2)
    va = build_pairs(m, labels[5:], k=3, n=2)
    cfg = TrainConfig(k=3, n=2, batch_size=16, max_epochs=6, patience=3, hidden=8, seed=seed, **kw)
    history = []
    params = train(tr, va, cfg, m, history=history)
    return params, history, va, m


def test_train_is_deterministic():
    a, ha, _, _ = _fit()
    b, hb, _, _ = _fit()
    assert a.digest() == b.digest()
    assert ha == hb
    c, _, _, _ = _fit(seed=1)
    assert c.digest() != a.digest()


def test_train_returns_best_snapshot():
    params, history, va, m = _fit()
    best = min(h["val_loss"] for h in history)
    got = validation_loss(params, va, m)
    assert got <= best + 1e-12
    assert got <= history[-1]["val_loss"]
    assert history[-1]["best_val_loss"] == pytest.approx(got, rel=1e-12)


def test_train_fits_separable_data():
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal([3, 0, 0, 0], 0.1, size=(20, 4)), rng.normal([0, 0, 3, 0], 0.1, size=(20, 4))])
    labels = ["a"] * 20 + ["b"] * 20
    m = EmbeddingMatrix(4, [f"r{i}" for i in range(40)], labels, pts)
    pairs = build_pairs(m, ["a", "b"], k=3, n=1)
    cfg = TrainConfig(k=3, n=1, batch_size=16, max_epochs=50, patience=50, hidden=16, lr=1e-2)
    history = []
    train(pairs, pairs, cfg, m, history=history)
    assert min(h["train_loss"] for h in history) < 0.1


def test_train_requires_pairs():
    m = small()
    pairs = build_pairs(m, m.class_labels(), k=2, n=1)
    with pytest.raises(ValueError):
        train([], pairs, TrainConfig(k=2, n=1, hidden=4), m)
