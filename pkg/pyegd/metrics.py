from __future__ import annotations

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from rich.table import Table

from .gestures import Gesture, Task

__all__ = (
    'Confusion',
    'f1_score',
    'InstancePrediction',
    'ScopeOutcome',
    'FoldResult',
    'MetricsReport',
    'compute_metrics',
    'METRICS_HEADER',
)

log = logging.getLogger(__name__)

MetricKey = Tuple[Optional[Task], Gesture]

METRICS_HEADER = (
    'kind', 'fold', 'scope', 'task', 'gesture', 'tp', 'fp', 'fn', 'tn', 'f1', 'degenerate', 'error_pct', 'mean_f1', 'std_f1',
)


class Confusion:
    """
    Binary confusion counts with erroneous as the positive class.

    Attributes
    ----------
    tp : :class:`int`
    fp : :class:`int`
    fn : :class:`int`
    tn : :class:`int`
    """

    __slots__ = ('tp', 'fp', 'fn', 'tn')

    def __init__(self, tp: int = 0, fp: int = 0, fn: int = 0, tn: int = 0):
        if min(tp, fp, fn, tn) < 0:
            raise ValueError('confusion counts must be non-negative')
        self.tp: int = tp
        self.fp: int = fp
        self.fn: int = fn
        self.tn: int = tn

    def add(self, predicted: int, actual: int) -> None:
        if predicted and actual:
            self.tp += 1
        elif predicted:
            self.fp += 1
        elif actual:
            self.fn += 1
        else:
            self.tn += 1

    @classmethod
    def from_labels(cls, predicted: Iterable[int], actual: Iterable[int]) -> Confusion:
        confusion = cls()
        for p, a in zip(predicted, actual):
            confusion.add(p, a)
        return confusion

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def f1(self) -> float:
        return f1_score(self)[0]

    @property
    def degenerate(self) -> bool:
        return f1_score(self)[1]

    def __add__(self, other: Confusion) -> Confusion:
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Confusion) and self.counts() == other.counts()

    def counts(self) -> Tuple[int, int, int, int]:
        return self.tp, self.fp, self.fn, self.tn

    def __repr__(self):
        return f'<Confusion tp={self.tp} fp={self.fp} fn={self.fn} tn={self.tn}>'


def f1_score(confusion: Confusion) -> Tuple[float, bool]:
    """
    ``2TP / (2TP + FP + FN)``; a zero denominator gives ``(0.0, True)``.
    """
    denominator = 2 * confusion.tp + confusion.fp + confusion.fn
    if denominator == 0:
        return 0.0, True
    return 2 * confusion.tp / denominator, False


def _pool(confusions: Iterable[Confusion]) -> Confusion:
    pooled = Confusion()
    for confusion in confusions:
        pooled = pooled + confusion
    return pooled


class InstancePrediction(NamedTuple):
    """The fused verdict on one gesture instance."""

    trial_id: str
    gesture_index: int
    task: Task
    gesture: Gesture
    label: int
    predicted: int
    windows: int
    erroneous_windows: int


class ScopeOutcome:
    """
    What one model did on one fold.

    Attributes
    ----------
    scope : :class:`str`
        The scope name, such as ``*/G1``.
    confusion : :class:`Confusion`
        Instance-level counts.
    window_confusion : :class:`Confusion`
        Window-level counts.
    error_pct : :class:`float`
        Percentage of erroneous instances in the training data.
    train_windows : :class:`int`
    """

    __slots__ = ('scope', 'confusion', 'window_confusion', 'error_pct', 'train_windows')

    def __init__(
            self,
            *,
            scope: str,
            confusion: Confusion,
            window_confusion: Confusion,
            error_pct: float,
            train_windows: int
    ):
        self.scope: str = scope
        self.confusion: Confusion = confusion
        self.window_confusion: Confusion = window_confusion
        self.error_pct: float = error_pct
        self.train_windows: int = train_windows

    def __repr__(self):
        return f'<ScopeOutcome scope={self.scope} confusion={self.confusion!r}>'


class FoldResult:
    """
    The predictions of every model of one fold.

    Attributes
    ----------
    index : :class:`int`
        The held-out super trial.
    scopes : List[:class:`ScopeOutcome`]
    predictions : List[:class:`InstancePrediction`]
    window_confusions : Dict[Tuple[:class:`Task`, :class:`Gesture`], :class:`Confusion`]
        Window-level counts per task and gesture.
    elapsed_s : :class:`float`
        Wall-clock time spent training and predicting.
    """

    __slots__ = ('index', 'scopes', 'predictions', 'window_confusions', 'elapsed_s')

    def __init__(
            self,
            *,
            index: int,
            scopes: List[ScopeOutcome],
            predictions: List[InstancePrediction],
            window_confusions: Optional[Dict[MetricKey, Confusion]] = None,
            elapsed_s: float = 0.0
    ):
        self.index: int = index
        self.scopes: List[ScopeOutcome] = scopes
        self.predictions: List[InstancePrediction] = predictions
        self.window_confusions: Dict[MetricKey, Confusion] = dict(window_confusions or {})
        self.elapsed_s: float = elapsed_s

    def confusions(self) -> Dict[MetricKey, Confusion]:
        """Instance-level counts per task and gesture."""
        confusions: Dict[MetricKey, Confusion] = defaultdict(Confusion)
        for prediction in self.predictions:
            confusions[(prediction.task, prediction.gesture)].add(prediction.predicted, prediction.label)
        return dict(confusions)

    @property
    def micro_f1(self) -> float:
        return _pool(outcome.confusion for outcome in self.scopes).f1

    def __repr__(self):
        return f'<FoldResult index={self.index} scopes={len(self.scopes)} instances={len(self.predictions)}>'


def _key_order(key: MetricKey) -> Tuple[str, int]:
    task, gesture = key
    return (task.value if task else ''), gesture.number


def _format(value: Optional[float]) -> str:
    return '' if value is None else f'{value:.6f}'


class MetricsReport:
    """
    Instance-level F1 scores, pooled and per gesture, with the fold results behind them.

    Micro F1 is always recomputed from summed counts, never averaged from
    per-gesture scores.

    Attributes
    ----------
    confusions : Dict[Tuple[Optional[:class:`Task`], :class:`Gesture`], :class:`Confusion`]
        Instance-level counts per task and gesture.
    window_confusions : Dict[Tuple[Optional[:class:`Task`], :class:`Gesture`], :class:`Confusion`]
        Window-level counts, same keys.
    error_percentages : Dict[Tuple[Optional[:class:`Task`], :class:`Gesture`], :class:`float`]
        Percentage of erroneous instances in the data.
    folds : List[:class:`FoldResult`]
    label : :class:`str`
        Names the run, for example ``GST* siamese-lstm``.
    """

    __slots__ = ('confusions', 'window_confusions', 'error_percentages', 'folds', 'label')

    def __init__(
            self,
            confusions: Dict[MetricKey, Confusion],
            *,
            window_confusions: Optional[Dict[MetricKey, Confusion]] = None,
            error_percentages: Optional[Dict[MetricKey, float]] = None,
            folds: Sequence[FoldResult] = (),
            label: str = ''
    ):
        self.confusions: Dict[MetricKey, Confusion] = dict(sorted(confusions.items(), key=lambda i: _key_order(i[0])))
        self.window_confusions: Dict[MetricKey, Confusion] = dict(window_confusions or {})
        self.error_percentages: Dict[MetricKey, float] = dict(error_percentages or {})
        self.folds: List[FoldResult] = list(folds)
        self.label: str = label

    @property
    def pooled(self) -> Confusion:
        return _pool(self.confusions.values())

    @property
    def micro_f1(self) -> float:
        return self.pooled.f1

    @property
    def window_micro_f1(self) -> Optional[float]:
        if not self.window_confusions:
            return None
        return _pool(self.window_confusions.values()).f1

    def per_gesture(self) -> Dict[Gesture, Confusion]:
        """Counts pooled over tasks for every gesture."""
        per: Dict[Gesture, Confusion] = {}
        for (_, gesture), confusion in self.confusions.items():
            per[gesture] = per.get(gesture, Confusion()) + confusion
        return dict(sorted(per.items(), key=lambda item: item[0].number))

    def per_task(self) -> Dict[Task, Confusion]:
        per: Dict[Task, Confusion] = {}
        for (task, _), confusion in self.confusions.items():
            if task is not None:
                per[task] = per.get(task, Confusion()) + confusion
        return per

    def fold_f1s(self) -> List[float]:
        return [fold.micro_f1 for fold in self.folds if fold.scopes]

    @property
    def fold_mean(self) -> Optional[float]:
        scores = self.fold_f1s()
        return float(np.mean(scores)) if scores else None

    @property
    def fold_std(self) -> Optional[float]:
        scores = self.fold_f1s()
        return float(np.std(scores)) if scores else None

    def _gesture_error_pct(self, gesture: Gesture) -> Optional[float]:
        values = [pct for (_, g), pct in self.error_percentages.items() if g is gesture]
        return float(np.mean(values)) if values else None

    def rows(self) -> List[Dict[str, Any]]:
        """The CSV rows: fold/scope rows, per task and gesture, per gesture, per task, then summaries."""
        rows: List[Dict[str, Any]] = []

        def row(kind: str, confusion: Confusion, **fields: Any) -> None:
            f1, degenerate = f1_score(confusion)
            entry = {name: '' for name in METRICS_HEADER}
            entry.update(kind=kind, tp=confusion.tp, fp=confusion.fp, fn=confusion.fn, tn=confusion.tn,
                         f1=_format(f1), degenerate=int(degenerate))
            entry.update(fields)
            rows.append(entry)

        for fold in self.folds:
            for outcome in fold.scopes:
                task, gesture = outcome.scope.split('/')
                row('fold', outcome.confusion, fold=fold.index, scope=outcome.scope, task=task, gesture=gesture,
                    error_pct=_format(outcome.error_pct))

        for (task, gesture), confusion in self.confusions.items():
            row('task_gesture', confusion, scope='', task=task.value if task else '*', gesture=gesture.value,
                error_pct=_format(self.error_percentages.get((task, gesture))))
        for gesture, confusion in self.per_gesture().items():
            row('gesture', confusion, task='*', gesture=gesture.value, error_pct=_format(self._gesture_error_pct(gesture)))
        for task, confusion in self.per_task().items():
            row('task', confusion, task=task.value, gesture='*')

        if self.window_confusions:
            row('window_micro_f1', _pool(self.window_confusions.values()), task='*', gesture='*')
        row('micro_f1', self.pooled, task='*', gesture='*', scope=self.label,
            mean_f1=_format(self.fold_mean), std_f1=_format(self.fold_std))
        return rows

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.DictWriter(file, fieldnames=METRICS_HEADER, lineterminator='\n')
            writer.writeheader()
            writer.writerows(self.rows())

    def table(self) -> Table:
        table = Table(title=f'{self.label} micro F1 {self.micro_f1:.3f}' if self.label else f'micro F1 {self.micro_f1:.3f}')
        for column in ('Task', 'Gesture', 'Instances', 'Erroneous', 'TP', 'FP', 'FN', 'F1'):
            table.add_column(column, justify='left' if column in ('Task', 'Gesture') else 'right')
        for (task, gesture), confusion in self.confusions.items():
            f1, degenerate = f1_score(confusion)
            table.add_row(
                task.value if task else '*', gesture.value, str(confusion.total), str(confusion.tp + confusion.fn),
                str(confusion.tp), str(confusion.fp), str(confusion.fn), 'n/a' if degenerate else f'{f1:.3f}',
            )
        if self.fold_mean is not None:
            table.caption = f'fold mean {self.fold_mean:.3f} ± {self.fold_std:.3f}'
        return table

    def __repr__(self):
        return f'<MetricsReport label={self.label!r} micro_f1={self.micro_f1:.4f} folds={len(self.folds)}>'


def compute_metrics(
        confusions: Mapping[Union[Gesture, MetricKey], Confusion],
        *,
        window_confusions: Optional[Mapping[MetricKey, Confusion]] = None,
        error_percentages: Optional[Mapping[MetricKey, float]] = None,
        folds: Sequence[FoldResult] = (),
        label: str = ''
) -> MetricsReport:
    """
    Builds a report from confusion counts keyed by gesture or by ``(task, gesture)``.

    Returns
    -------
    :class:`MetricsReport`
    """
    keyed: Dict[MetricKey, Confusion] = {}
    for key, confusion in confusions.items():
        key = (None, key) if isinstance(key, Gesture) else key
        keyed[key] = keyed.get(key, Confusion()) + confusion
    return MetricsReport(
        keyed,
        window_confusions=dict(window_confusions or {}),
        error_percentages=dict(error_percentages or {}),
        folds=folds,
        label=label,
    )
