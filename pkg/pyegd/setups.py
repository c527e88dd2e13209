from __future__ import annotations

import logging
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

from .errors import ConfigError
from .gestures import EXPERIMENT_GESTURES, Gesture, Task
from .preprocess import FeatureWindow

__all__ = (
    'TrainingSetup',
    'Scope',
    'ScopedDataset',
    'scope_for',
    'enumerate_scopes',
    'assign_setup_datasets',
)

log = logging.getLogger(__name__)


class TrainingSetup(Enum):
    """
    Specifies how training data is pooled across gestures and tasks.

    .. attribute:: gsts

        One model per gesture and task (``GSTS``).

    .. attribute:: gst

        One model per gesture, pooled across tasks (``GST*``).

    .. attribute:: gts

        One model per task, pooled across gestures (``G*TS``).

    .. attribute:: gtt

        A single model for every gesture of every task (``G*T*``).
    """

    gsts = 'gsts'
    gst = 'gst'
    gts = 'gts'
    gtt = 'gtt'

    @property
    def binds_task(self) -> bool:
        return self in (TrainingSetup.gsts, TrainingSetup.gts)

    @property
    def binds_gesture(self) -> bool:
        return self in (TrainingSetup.gsts, TrainingSetup.gst)

    @property
    def label(self) -> str:
        return {'gsts': 'GSTS', 'gst': 'GST*', 'gts': 'G*TS', 'gtt': 'G*T*'}[self.value]

    @classmethod
    def parse(cls, token: str) -> TrainingSetup:
        key = token.strip().lower()
        key = {'gst*': 'gst', 'g*ts': 'gts', 'g*t*': 'gtt'}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f'unknown training setup {token!r}; expected one of gsts, gst, gts, gtt')


class Scope(NamedTuple):
    """The slice of data one model is trained and evaluated on; ``None`` means pooled."""

    setup: TrainingSetup
    task: Optional[Task]
    gesture: Optional[Gesture]

    @property
    def name(self) -> str:
        task = self.task.value if self.task else '*'
        gesture = self.gesture.value if self.gesture else '*'
        return f'{task}/{gesture}'

    def matches(self, task: Task, gesture: Gesture) -> bool:
        return (self.task is None or self.task is task) and (self.gesture is None or self.gesture is gesture)


def scope_for(setup: TrainingSetup, task: Task, gesture: Gesture) -> Scope:
    """The scope of ``setup`` a window of ``task`` and ``gesture`` belongs to."""
    return Scope(setup, task if setup.binds_task else None, gesture if setup.binds_gesture else None)


def enumerate_scopes(setup: TrainingSetup, tasks: Sequence[Task], gestures: Sequence[Gesture]) -> List[Scope]:
    task_options: Sequence[Optional[Task]] = tasks if setup.binds_task else (None,)
    gesture_options: Sequence[Optional[Gesture]] = gestures if setup.binds_gesture else (None,)
    return [Scope(setup, task, gesture) for task in task_options for gesture in gesture_options]


class ScopedDataset:
    """
    The training and test windows of one scope.

    Attributes
    ----------
    scope : :class:`Scope`
    train : List[:class:`FeatureWindow`]
    test : List[:class:`FeatureWindow`]
    """

    __slots__ = ('scope', 'train', 'test')

    def __init__(self, scope: Scope, train: List[FeatureWindow], test: List[FeatureWindow]):
        self.scope: Scope = scope
        self.train: List[FeatureWindow] = train
        self.test: List[FeatureWindow] = test

    @property
    def normal(self) -> List[FeatureWindow]:
        return [window for window in self.train if not window.label]

    @property
    def erroneous(self) -> List[FeatureWindow]:
        return [window for window in self.train if window.label]

    def instances(self, which: str = 'all') -> Set[Tuple[str, int]]:
        """Distinct gesture instances among the ``train``, ``test`` or ``all`` windows."""
        windows = {'train': self.train, 'test': self.test, 'all': self.train + self.test}[which]
        return {window.instance_key for window in windows}

    def error_percentage(self) -> float:
        """Percentage of erroneous instances among the training instances."""
        labels: Dict[Tuple[str, int], int] = {window.instance_key: window.label for window in self.train}
        return 100.0 * sum(labels.values()) / len(labels) if labels else 0.0

    def __repr__(self):
        return f'<ScopedDataset scope={self.scope.name} train={len(self.train)} test={len(self.test)}>'


def assign_setup_datasets(
        windows: Iterable[FeatureWindow],
        setup: TrainingSetup,
        *,
        test_windows: Iterable[FeatureWindow] = (),
        gestures: Sequence[Gesture] = EXPERIMENT_GESTURES,
        min_normal: int = 1
) -> List[ScopedDataset]:
    """
    Partitions windows into the scopes of ``setup``.

    Windows of gestures outside ``gestures`` are dropped. A scope is skipped,
    with a warning, when its training windows lack erroneous windows or hold
    fewer than ``min_normal`` normal ones.

    Parameters
    ----------
    windows : Iterable[:class:`FeatureWindow`]
        The training windows.
    setup : :class:`TrainingSetup`
    test_windows : Iterable[:class:`FeatureWindow`]
        Windows routed to the same scopes for evaluation.
    gestures : Sequence[:class:`Gesture`]
        The gestures to model, in report order.
    min_normal : :class:`int`
        The fewest normal training windows a scope needs. Siamese pairing needs 2.

    Returns
    -------
    List[:class:`ScopedDataset`]
        In scope order: tasks in declaration order, then ``gestures`` order.
    """
    train_windows = [window for window in windows if window.gesture in gestures]
    test = [window for window in test_windows if window.gesture in gestures]
    tasks = [task for task in Task if any(window.task is task for window in train_windows + test)]

    by_scope: Dict[Scope, ScopedDataset] = {
        scope: ScopedDataset(scope, [], []) for scope in enumerate_scopes(setup, tasks, gestures)
    }
    for window in train_windows:
        by_scope[scope_for(setup, window.task, window.gesture)].train.append(window)
    for window in test:
        by_scope[scope_for(setup, window.task, window.gesture)].test.append(window)

    datasets: List[ScopedDataset] = []
    for scope, dataset in by_scope.items():
        if not dataset.train and not dataset.test:
            continue
        if len(dataset.normal) < min_normal or not dataset.erroneous:
            log.warning(
                '%s scope %s has %d normal and %d erroneous training windows, skipped',
                setup.label, scope.name, len(dataset.normal), len(dataset.erroneous)
            )
            continue
        datasets.append(dataset)
    return datasets
