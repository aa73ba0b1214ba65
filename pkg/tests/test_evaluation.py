import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_f1

from l2ac.errors import EmptySeenSet
from l2ac.evaluation import (
    C_REJ,
    ExperimentPlan,
    run_openworld_experiment,
    split_test_classes,
    summarize,
    weighted_f1,
)
from l2ac.meta_classifier import REJECT
from l2ac.synthetic import SyntheticSpec, class_means, far_probes, gen_synthetic
from l2ac.training import TrainConfig


def test_weighted_f1_worked_example():
    gold = ["A", "A", "B", "B", C_REJ]
    pred = ["A", "B", "B", "A", REJECT]
    rep = weighted_f1(gold, pred, ["A", "B"])
    assert rep.per_class_f1["A"] == pytest.approx(0.5)
    assert rep.per_class_f1["B"] == pytest.approx(0.5)
    assert rep.per_class_f1[C_REJ] == 1.0
    assert rep.weighted_f1 == pytest.approx(0.6)
    assert rep.macro_f1 == pytest.approx(2 / 3)

    gold = ["A", "A", "B", C_REJ]
    pred = ["A", "B", "B", C_REJ]
    rep = weighted_f1(gold, pred, ["A", "B"])
    assert rep.per_class_f1["A"] == pytest.approx(2 / 3)
    assert rep.per_class_f1["B"] == pytest.approx(2 / 3)
    assert rep.weighted_f1 == pytest.approx(0.75)
    assert rep.macro_f1 == pytest.approx(7 / 9)


def test_perfect_and_empty_classes():
    rep = weighted_f1(["A", "B", C_REJ], ["A", "B", C_REJ], ["A", "B", "C"])
    assert rep.weighted_f1 == 1.0
    assert rep.per_class_f1["C"] == 0.0
    assert rep.support["C"] == 0
    assert rep.classes == ["A", "B", "C", C_REJ]


def test_weighted_f1_validation():
    with pytest.raises(ValueError):
        weighted_f1(["A"], ["A", "A"], ["A"])
    with pytest.raises(ValueError):
        weighted_f1(["Z"], ["A"], ["A"])
    with pytest.raises(ValueError):
        weighted_f1(["A"], ["Z"], ["A"])


def test_metric_matches_confusion_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        S = [f"k{i}" for i in range(rng.integers(1, 6))]
        classes = sorted(S) + [C_REJ]
        size = int(rng.integers(1, 60))
        gold = [classes[i] for i in rng.integers(0, len(classes), size)]
        pred = [classes[i] for i in rng.integers(0, len(classes), size)]
        rep = weighted_f1(gold, pred, S)
        w, m = oracle_f1(gold, pred, classes)
        assert abs(rep.weighted_f1 - w) <= 1e-12
        assert abs(rep.macro_f1 - m) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_metric_bounds_and_support(pairs):
    names = ["A", "B", "C", C_REJ]
    gold = [names[g] for g, _ in pairs]
    pred = [names[p] for _, p in pairs]
    rep = weighted_f1(gold, pred, ["A", "B", "C"])
    assert 0.0 <= rep.weighted_f1 <= 1.0
    assert 0.0 <= rep.macro_f1 <= 1.0
    assert sum(rep.support.values()) == len(pairs)
    assert sum(rep.confusion.values()) == len(pairs)
    if gold == pred:
        assert rep.weighted_f1 == 1.0


def test_report_rendering():
    rep = weighted_f1(["A", C_REJ], ["A", "A"], ["A"])
    rep.meta["seen_size"] = 1
    text = rep.to_text()
    assert text.startswith("report:\n  seen_size: 1\n")
    assert "    c_rej:\n      f1: 0.0\n" in text
    flat = dict(line.split("\t") for line in rep.to_flat("s1.").splitlines())
    assert flat["s1.support.A"] == "1"
    assert rep.confusion_lines() == "A\tA\t1\nc_rej\tA\t1\n"


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(5, 7, 4, 0.3, seed=11)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    assert a == b
    assert len(a) == 35 and a.class_labels() == spec.labels()
    assert gen_synthetic(SyntheticSpec(5, 7, 4, 0.3, seed=12)) != a
    assert np.allclose(np.linalg.norm(np.stack(list(class_means(spec).values())), axis=1), 1.0)


def test_synthetic_low_noise_is_nearest_mean_separable():
    spec = SyntheticSpec(10, 50, 16, 0.05, seed=0)
    m = gen_synthetic(spec)
    means = class_means(spec)
    labels = list(means)
    M = np.stack([means[lab] for lab in labels])
    nearest = np.argmin(((m.vectors[:, None, :] - M[None]) ** 2).sum(-1), axis=1)
    acc = np.mean([labels[j] == lab for j, lab in zip(nearest, m.labels)])
    assert acc >= 0.99


def test_far_probes_respect_distance():
    means = class_means(SyntheticSpec(12, 1, 6, 0.1, seed=2))
    probes = far_probes(means, 3.0, 40, seed=1)
    M = np.stack(list(means.values()))
    d = np.linalg.norm(probes.vectors[:, None, :] - M[None], axis=-1)
    assert d.min() >= 3.0
    assert len(probes) == 40


def test_plan_validation():
    labels = [f"c{i}" for i in range(10)]
    with pytest.raises(EmptySeenSet):
        ExperimentPlan.split(labels, 4, 3, 3, seen_sizes=(0,))
    with pytest.raises(ValueError):
        ExperimentPlan.split(labels, 4, 3, 3, seen_sizes=(4,))
    with pytest.raises(ValueError):
        ExperimentPlan(("a", "b"), ("b",), ("c",), (1,))
    with pytest.raises(ValueError):
        ExperimentPlan.split(labels, 5, 3, 3, seen_sizes=(1,))


def test_split_test_classes():
    m = gen_synthetic(SyntheticSpec(3, 6, 2, 0.1))
    stored, held = split_test_classes(m, ["c1", "c2"], 4)
    assert len(stored) == 8 and len(held) == 4
    assert set(stored.labels) == set(held.labels) == {"c1", "c2"}
    with pytest.raises(ValueError):
        split_test_classes(m, ["c1"], 6)


@pytest.fixture(scope="module")
def small_experiment():
    data = gen_synthetic(SyntheticSpec(14, 10, 6, 0.2, seed=5))
    plan = ExperimentPlan.split(data.class_labels(), 6, 4, 4, seen_sizes=(2, 4), k=3, n=3,
                                seeds=(0, 1), stored_per_class=6)
    cfg = TrainConfig(hidden=8, max_epochs=3, patience=2, batch_size=32)
    return plan, run_openworld_experiment(plan, data, cfg)


def test_experiment_structure(small_experiment):
    plan, reports = small_experiment
    assert [(r.meta["seed"], r.meta["seen_size"]) for r in reports] == [(0, 2), (0, 4), (1, 2), (1, 4)]
    for r in reports:
        assert sum(r.support.values()) == 4 * 4
        assert len(r.classes) == r.meta["seen_size"] + 1
    assert reports[0].meta["model_sha256"] == reports[1].meta["model_sha256"]
    assert reports[0].meta["model_sha256"] != reports[2].meta["model_sha256"]
    assert reports[0].support[C_REJ] == 8
    assert reports[1].support[C_REJ] == 0


def test_summarize(small_experiment):
    _, reports = small_experiment
    s = summarize(reports)
    assert set(s) == {2, 4}
    assert s[2]["runs"] == 2
    assert s[2]["weighted_f1"] == pytest.approx((reports[0].weighted_f1 + reports[2].weighted_f1) / 2)
