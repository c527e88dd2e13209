import csv

import numpy as np
import pytest

from pyegd import (
    METRICS_HEADER,
    Confusion,
    FoldResult,
    Gesture,
    ScopeOutcome,
    Task,
    compute_metrics,
    f1_score,
)


def test_f1():
    assert f1_score(Confusion(tp=3, fp=1, fn=2, tn=10)) == (6 / 9, False)
    assert f1_score(Confusion(tn=4)) == (0.0, True)
    with pytest.raises(ValueError):
        Confusion(tp=-1)


def test_confusion_from_labels():
    confusion = Confusion.from_labels([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert confusion.counts() == (2, 1, 1, 1)
    assert confusion.total == 5


def test_micro_f1_is_pooled():
    rng = np.random.default_rng(0)
    gestures = [Gesture.G1, Gesture.G2, Gesture.G3, Gesture.G4, Gesture.G6]
    for _ in range(100):
        confusions = {
            (Task.suturing, gesture): Confusion(*(int(v) for v in rng.integers(0, 20, size=4)))
            for gesture in gestures
        }
        report = compute_metrics(confusions)

        tp = sum(c.tp for c in confusions.values())
        fp = sum(c.fp for c in confusions.values())
        fn = sum(c.fn for c in confusions.values())
        expected = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
        assert report.micro_f1 == pytest.approx(expected)


def test_micro_is_not_the_mean_of_gestures():
    report = compute_metrics({Gesture.G1: Confusion(tp=9, fp=1), Gesture.G2: Confusion(fn=1, tn=5)})
    assert report.micro_f1 == pytest.approx(18 / 20)
    assert report.per_gesture()[Gesture.G2].f1 == 0.0


def test_degenerate_rows(tmp_path):
    report = compute_metrics({Gesture.G1: Confusion(tn=4), Gesture.G2: Confusion(tp=1)})
    rows = {row['gesture']: row for row in report.rows() if row['kind'] == 'task_gesture'}
    assert rows['G1']['degenerate'] == 1
    assert rows['G1']['f1'] == '0.000000'
    assert rows['G2']['degenerate'] == 0


def test_gesture_keys_merge_tasks():
    report = compute_metrics({
        (Task.suturing, Gesture.G1): Confusion(tp=1),
        (Task.needle_passing, Gesture.G1): Confusion(fp=1),
    })
    assert report.per_gesture()[Gesture.G1].counts() == (1, 1, 0, 0)
    assert set(report.per_task()) == {Task.suturing, Task.needle_passing}


def test_csv_layout(tmp_path):
    folds = [
        FoldResult(index=j, predictions=[], scopes=[ScopeOutcome(
            scope='*/G1', confusion=Confusion(tp=j, fn=1), window_confusion=Confusion(tp=j), error_pct=40.0,
            train_windows=10,
        )])
        for j in (1, 2)
    ]
    report = compute_metrics(
        {Gesture.G1: Confusion(tp=3, fn=2)},
        window_confusions={(None, Gesture.G1): Confusion(tp=3)},
        folds=folds, label='GST* cnn',
    )
    path = tmp_path / 'metrics.csv'

    report.to_csv(path)

    with open(path, newline='') as file:
        rows = list(csv.DictReader(file))
    assert tuple(rows[0]) == METRICS_HEADER
    assert [row['kind'] for row in rows] == ['fold', 'fold', 'task_gesture', 'gesture', 'window_micro_f1', 'micro_f1']
    summary = rows[-1]
    assert float(summary['f1']) == pytest.approx(6 / 8)
    assert float(summary['mean_f1']) == pytest.approx(np.mean([2 / 3, 4 / 5]))
    assert summary['scope'] == 'GST* cnn'


def test_table_renders():
    report = compute_metrics({Gesture.G1: Confusion(tp=3, fn=2)}, label='x')
    table = report.table()
    assert table.row_count == 1
