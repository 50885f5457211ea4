import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdefect.metrics import (MetricsReport, confusion_matrix, f1_per_class,
                              macro_f1, precision_recall_f1, to_binary)


def test_confusion_matrix_hand_counted():
    y_true = [0, 0, 1, 1, 2, 2, 2]
    y_pred = [0, 1, 1, 1, 0, 2, 2]
    cm = confusion_matrix(y_true, y_pred, 3)
    np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 2, 0], [1, 0, 2]])


def test_confusion_matrix_length_mismatch():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)


def test_precision_half_recall_one():
    # class 0: tp=2, fp=2, fn=0 -> P=0.5, R=1.0, f1=2*0.5/1.5
    cm = np.array([[2, 0], [2, 1]])
    p, r, f1 = precision_recall_f1(cm, 0)
    assert p == 0.5 and r == 1.0
    assert f1 == pytest.approx(2 / 3)


def test_f1_zero_when_never_predicted():
    cm = np.array([[0, 3], [0, 5]])
    p, r, f1 = precision_recall_f1(cm, 0)
    assert (p, r, f1) == (0.0, 0.0, 0.0)


def test_f1_zero_when_no_support():
    cm = np.array([[0, 0], [2, 3]])
    assert f1_per_class(cm, 0) == 0.0


def test_macro_is_unweighted_mean():
    assert macro_f1([1.0, 0.5, 0.0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        macro_f1([])


def test_perfect_predictions():
    report = MetricsReport.from_predictions([0, 1, 2, 3, 4], [0, 1, 2, 3, 4], 5)
    assert report.macro_f1 == 1.0
    assert report.f1 == [1.0] * 5


def test_binary_remap():
    np.testing.assert_array_equal(to_binary([0, 1, 2, 4, 0]), [0, 1, 1, 1, 0])


def test_binary_report_commutes_with_remap():
    rng = np.random.default_rng(0)
    y_true = rng.integers(0, 5, 200)
    y_pred = rng.integers(0, 5, 200)
    a = MetricsReport.from_predictions(y_true, y_pred, 5, task="binary")
    b = MetricsReport.from_predictions(to_binary(y_true), to_binary(y_pred), 2)
    assert a.macro_f1 == pytest.approx(b.macro_f1)
    np.testing.assert_array_equal(a.confusion, b.confusion)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=120))
def test_macro_f1_matches_sklearn(pairs):
    sklearn_metrics = pytest.importorskip("sklearn.metrics")
    y_true = [a for a, _ in pairs]
    y_pred = [b for _, b in pairs]
    report = MetricsReport.from_predictions(y_true, y_pred, 5)
    ref = sklearn_metrics.f1_score(y_true, y_pred, labels=list(range(5)),
                                   average="macro", zero_division=0)
    assert report.macro_f1 == pytest.approx(ref, abs=1e-12)


def test_report_rows_and_summary():
    report = MetricsReport.from_predictions([0, 1, 1], [0, 1, 0], 2)
    rows = list(report.rows())
    assert [r["class"] for r in rows] == [0, 1]
    summary = report.summary()
    assert summary["support"] == [1, 2]
    assert summary["macro_f1"] == pytest.approx(report.macro_f1)
