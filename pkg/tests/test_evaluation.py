import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn import metrics as skm

from followage.evaluation import (Metrics, aggregate_population, coarsen, confusion_matrix, prior_baseline,
                                  resolve_truth, roc_auc, roc_curve, score_metrics, split_holdout)
from followage.ingestion import LabeledAccount
from followage.taxonomy import DEFAULT_TAXONOMY, default_prior

PRIOR = default_prior(DEFAULT_TAXONOMY)


def accounts(n):
    return [LabeledAccount(u, "explicit_age", np.eye(10)[u % 10]) for u in range(n)]


def test_split_sizes_and_determinism():
    train, test = split_holdout(accounts(100), 0.1, seed=4)
    assert len(test) == 10 and len(train) == 90
    assert {a.user_id for a in train}.isdisjoint(a.user_id for a in test)
    again = split_holdout(accounts(100), 0.1, seed=4)
    assert [a.user_id for a in again[1]] == [a.user_id for a in test]


def test_split_empty_side():
    with pytest.raises(ValueError):
        split_holdout(accounts(3), 0.1, seed=0)


def test_perfect_predictions():
    truth = {u: u % 3 for u in range(30)}
    m = score_metrics(truth, truth, ["a", "b", "c"])
    assert np.all(m.precision == 1) and np.all(m.recall == 1) and m.micro_f1 == 1


def test_two_class_hand_count():
    truth = dict(enumerate([0, 0, 1, 1]))
    pred = dict(enumerate([0, 1, 1, 1]))
    m = score_metrics(truth, pred, ["0", "1"])
    assert m.precision[1] == pytest.approx(2 / 3)
    assert m.recall[1] == 1.0
    assert m.micro_f1 == 0.75


def test_single_class_truth():
    truth = {u: 0 for u in range(5)}
    pred = {0: 0, 1: 1, 2: 0, 3: 2, 4: 0}
    m = score_metrics(truth, pred, ["0", "1", "2"])
    assert m.recall[0] == pytest.approx(0.6)
    assert m.precision[1] == 0 and m.precision[2] == 0
    assert m.recall[1] == 0


def test_id_mismatch():
    with pytest.raises(ValueError, match="different ids"):
        score_metrics({1: 0}, {2: 0}, ["0"])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=200))
def test_against_sklearn(pairs):
    truth = {i: t for i, (t, _) in enumerate(pairs)}
    pred = {i: p for i, (_, p) in enumerate(pairs)}
    m = score_metrics(truth, pred, list("abcde"))
    y, yhat = [t for t, _ in pairs], [p for _, p in pairs]
    assert m.micro_f1 == pytest.approx(skm.f1_score(y, yhat, average="micro", labels=range(5)))
    assert m.micro_f1 == pytest.approx(skm.accuracy_score(y, yhat))
    np.testing.assert_allclose(m.precision, skm.precision_score(y, yhat, average=None, labels=range(5),
                                                                 zero_division=0))
    np.testing.assert_allclose(m.recall, skm.recall_score(y, yhat, average=None, labels=range(5), zero_division=0))
    np.testing.assert_array_equal(m.confusion, skm.confusion_matrix(y, yhat, labels=range(5)))


def test_report_layout():
    m = Metrics(confusion_matrix([0, 1, 2], [0, 1, 1], 3), ("<18", "18-44", ">=45"))
    lines = m.to_text().splitlines()
    assert lines[0].split("\t")[1:] == ["<18", "18-44", ">=45"]
    assert [ln.split("\t")[0] for ln in lines[1:]] == ["test_cases", "recall", "precision", "micro_f1"]


def test_coarsen():
    assert coarsen(3) == 0 and coarsen(4) == 1 and coarsen(6) == 1 and coarsen(7) == 2
    np.testing.assert_allclose(coarsen(PRIOR), [0.08, 0.60, 0.32], atol=1e-15)
    with pytest.raises(ValueError):
        coarsen(np.ones(7) / 7)
    with pytest.raises(ValueError):
        coarsen(10)


@given(st.lists(st.floats(0, 1), min_size=10, max_size=10).filter(lambda v: sum(v) > 0))
def test_coarsen_preserves_group_sums(v):
    p = np.array(v) / sum(v)
    c = coarsen(p)
    assert abs(c.sum() - 1) <= 1e-12
    assert abs(c[0] - p[:4].sum()) <= 1e-12 and abs(c[1] - p[4:7].sum()) <= 1e-12
    assert abs(c[2] - p[7:].sum()) <= 1e-12


def test_roc_extremes():
    y = np.array([0, 0, 1, 1, 1])
    s = np.array([0.1, 0.2, 0.7, 0.8, 0.9])
    assert roc_curve(y == 1, s).auc == 1.0
    assert roc_curve(y == 1, -s).auc == 0.0


def test_roc_random_near_half():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 10_000).astype(bool)
    assert abs(roc_curve(y, rng.random(10_000)).auc - 0.5) <= 0.02


@settings(max_examples=50)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 20)), min_size=2, max_size=200)
       .filter(lambda r: 0 < sum(b for b, _ in r) < len(r)))
def test_roc_against_sklearn_and_monotone(rows):
    y = np.array([b for b, _ in rows])
    s = np.array([v for _, v in rows], dtype=float)
    c = roc_curve(y, s)
    assert c.auc == pytest.approx(skm.roc_auc_score(y, s), abs=1e-12)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert roc_curve(y, np.exp(s / 3) + 7).auc == pytest.approx(c.auc, abs=1e-12)


def test_absent_class_reported():
    post = np.random.default_rng(0).dirichlet(np.ones(3), size=20)
    curves = roc_auc([0] * 10 + [1] * 10, post)
    assert curves[2] is None and curves[0] is not None


def test_baseline_one_hot_prior():
    pred = prior_baseline(np.eye(10)[3], range(50), seed=1)
    assert set(pred.values()) == {3}


def test_baseline_frequencies_within_3_sigma():
    n = 200_000
    pred = prior_baseline(PRIOR, range(n), seed=9)
    freq = np.bincount(list(pred.values()), minlength=10)
    sigma = np.sqrt(n * PRIOR * (1 - PRIOR))
    assert np.all(np.abs(freq - n * PRIOR) <= 3 * sigma)


def test_baseline_expected_micro_f1():
    # truth and predictions drawn independently from the same prior agree with probability sum(pi^2)
    expected = float(np.sum(PRIOR ** 2))
    assert expected == pytest.approx(0.1808, abs=1e-12)
    n = 400_000
    truth = prior_baseline(PRIOR, range(n), seed=1)
    pred = prior_baseline(PRIOR, range(n), seed=2)
    f1 = score_metrics(truth, pred, DEFAULT_TAXONOMY.labels).micro_f1
    assert abs(f1 - expected) <= 4 * np.sqrt(expected * (1 - expected) / n)


def test_resolve_truth():
    labels = [LabeledAccount(1, "explicit_age", np.eye(10)[4]),
              LabeledAccount(2, "grandparent", np.array([0] * 7 + [1 / 3] * 3))]
    t = resolve_truth(labels, seed=0)
    assert t[1] == 4 and t[2] in (7, 8, 9)
    assert resolve_truth(labels[::-1], seed=0) == t


def test_population():
    pop = aggregate_population([4] * 25, 10)
    assert list(pop.counts) == [0] * 4 + [25] + [0] * 5
    pred = prior_baseline(PRIOR, range(100_000), seed=5)
    pop = aggregate_population(pred.values(), 10)
    assert pop.total == 100_000
    sigma = np.sqrt(PRIOR * (1 - PRIOR) / 100_000)
    assert np.all(np.abs(pop.fractions - PRIOR) <= 4 * sigma)
    with pytest.raises(ValueError):
        aggregate_population([11], 10)
