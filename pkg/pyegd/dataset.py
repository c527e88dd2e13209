from __future__ import annotations

import logging
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .errors import DatasetError, FoldError, LabelError
from .gestures import (
    EXPERIMENT_GESTURES,
    ErrorLabel,
    Gesture,
    GestureInstance,
    LabelKey,
    Task,
    parse_error_labels,
    parse_transcript,
    trial_code,
)
from .kinematics import KinematicSequence, parse_kinematics

__all__ = (
    'N_FOLDS',
    'Provenance',
    'Object',
    'TrialRecord',
    'DatasetManifest',
    'Fold',
    'assemble_dataset',
    'split_loso_folds',
)

log = logging.getLogger(__name__)

N_FOLDS = 5


class Provenance(Enum):
    """
    Specifies where a dataset came from.

    .. attribute:: real

        Parsed from recorded demonstrations.

    .. attribute:: synthetic

        Written by :func:`generate_synthetic`.
    """

    real = 'real'
    synthetic = 'synthetic'


class Object:
    """
    Represents a generic identified record. Records compare equal when
    their class and ID match.

    Attributes
    ----------
    id : :class:`str`
        The ID of the object.
    """

    __slots__ = ('id',)

    def __init__(self, *, id: str):
        self.id: str = id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, self.__class__) and other.id == self.id

    def __ne__(self, other: object) -> bool:
        if isinstance(other, self.__class__):
            return other.id != self.id
        return True

    def __hash__(self) -> int:
        return hash((self.__class__.__name__, self.id))


class TrialRecord(Object):
    """
    Represents one demonstration of a task.

    Attributes
    ----------
    id : :class:`str`
        The file stem of the trial, e.g. ``Suturing_B001``.
    task : :class:`Task`
        The task that was performed.
    subject_id : :class:`str`
        The subject letter.
    repetition_index : :class:`int`
        The repetition, in ``[1, 5]``; trials sharing it form a super trial.
    samples : :class:`KinematicSequence`
        The kinematics at 30 Hz.
    gesture_instances : List[:class:`GestureInstance`]
        The annotated gestures, ordered and non-overlapping.
    """

    __slots__ = ('task', 'subject_id', 'repetition_index', 'samples', 'gesture_instances')

    def __init__(
            self,
            *,
            id: str,
            task: Task,
            subject_id: str,
            repetition_index: int,
            samples: KinematicSequence,
            gesture_instances: Sequence[GestureInstance]
    ):
        super().__init__(id=id)
        self.task: Task = task
        self.subject_id: str = subject_id
        self.repetition_index: int = repetition_index
        self.samples: KinematicSequence = samples
        self.gesture_instances: List[GestureInstance] = list(gesture_instances)

        previous_end = 0
        for instance in self.gesture_instances:
            if instance.start_frame <= previous_end:
                raise DatasetError(f'{id}: gesture {instance.index} overlaps or precedes the gesture before it')
            if instance.start_frame < 1 or instance.end_frame > len(samples):
                raise DatasetError(
                    f'{id}: gesture {instance.index} spans frames {instance.start_frame}-{instance.end_frame} '
                    f'outside the {len(samples)} recorded frames'
                )
            previous_end = instance.end_frame

    @classmethod
    def parse_name(cls, name: str) -> Tuple[Task, str, int]:
        """
        Splits a trial name such as ``Needle_Passing_C004`` into task, subject and repetition.

        Raises
        ------
        :class:`DatasetError`
            The name does not follow the JIGSAWS pattern.
        """
        stem = Path(name).stem
        try:
            code = trial_code(stem)
            task = Task.parse(stem[:-len(code)].rstrip('_'))
        except ValueError as exc:
            raise DatasetError(f'cannot read task and trial from {name!r}: {exc}')
        return task, code[0], int(code[1:])

    @property
    def code(self) -> str:
        return f'{self.subject_id}{self.repetition_index:03d}'

    def instance_samples(self, instance: GestureInstance) -> KinematicSequence:
        """Returns the frames of a gesture instance (transcript frames are 1-based, inclusive)."""
        return self.samples[instance.start_frame - 1:instance.end_frame]

    def labeled_instances(self) -> List[GestureInstance]:
        return [instance for instance in self.gesture_instances if instance.supported and instance.error_label is not None]

    def __repr__(self):
        return (
            f'<TrialRecord id={self.id} task={self.task.value} subject_id={self.subject_id} '
            f'repetition_index={self.repetition_index} frames={len(self.samples)} '
            f'gestures={len(self.gesture_instances)}>'
        )


class DatasetManifest:
    """
    Represents an assembled dataset.

    Attributes
    ----------
    root : :class:`pathlib.Path`
        The directory the dataset was read from.
    trials : List[:class:`TrialRecord`]
        The trials, sorted by task and ID.
    provenance : :class:`Provenance`
        Whether the data is real or synthetic.
    seed : Optional[:class:`int`]
        The generator seed of a synthetic dataset.
    """

    __slots__ = ('root', 'trials', 'provenance', 'seed')

    def __init__(
            self,
            *,
            root: Union[str, Path],
            trials: Iterable[TrialRecord],
            provenance: Provenance = Provenance.real,
            seed: Optional[int] = None
    ):
        self.root: Path = Path(root)
        self.trials: List[TrialRecord] = sorted(trials, key=lambda trial: (trial.task.value, trial.id))
        self.provenance: Provenance = provenance
        self.seed: Optional[int] = seed

        seen = set()
        for trial in self.trials:
            if trial.id in seen:
                raise DatasetError(f'trial {trial.id} appears more than once')
            seen.add(trial.id)

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self) -> Iterator[TrialRecord]:
        return iter(self.trials)

    def subset(self, trials: Iterable[TrialRecord]) -> DatasetManifest:
        return DatasetManifest(root=self.root, trials=trials, provenance=self.provenance, seed=self.seed)

    def tasks(self) -> List[Task]:
        return sorted({trial.task for trial in self.trials}, key=lambda task: task.value)

    def instances(self) -> Iterator[Tuple[TrialRecord, GestureInstance]]:
        """Yields every labeled, supported gesture instance with its trial."""
        for trial in self.trials:
            for instance in trial.labeled_instances():
                yield trial, instance

    def counts(self, gestures: Sequence[Gesture] = EXPERIMENT_GESTURES) -> Dict[Tuple[Task, Gesture], Tuple[int, int]]:
        """
        Counts gesture instances per task and gesture.

        Returns
        -------
        Dict[Tuple[:class:`Task`, :class:`Gesture`], Tuple[:class:`int`, :class:`int`]]
            ``(total, erroneous)`` for every task and gesture present.
        """
        counts: Dict[Tuple[Task, Gesture], List[int]] = defaultdict(lambda: [0, 0])
        for trial, instance in self.instances():
            if instance.gesture not in gestures:
                continue
            entry = counts[(trial.task, instance.gesture)]
            entry[0] += 1
            entry[1] += instance.error_label or 0

        order = {gesture: position for position, gesture in enumerate(gestures)}
        return {
            key: (total, erroneous)
            for key, (total, erroneous) in sorted(counts.items(), key=lambda item: (item[0][0].value, order[item[0][1]]))
        }

    def __repr__(self):
        return (
            f'<DatasetManifest root={self.root} trials={len(self.trials)} provenance={self.provenance.value} '
            f'seed={self.seed}>'
        )


class Fold:
    """
    Represents one Leave-One-SuperTrial-Out fold.

    Attributes
    ----------
    index : :class:`int`
        The held-out repetition, in ``[1, 5]``.
    train : List[:class:`TrialRecord`]
        The trials of the other four super trials.
    test : List[:class:`TrialRecord`]
        The trials of the held-out super trial.
    """

    __slots__ = ('index', 'train', 'test')

    def __init__(self, *, index: int, train: List[TrialRecord], test: List[TrialRecord]):
        self.index: int = index
        self.train: List[TrialRecord] = train
        self.test: List[TrialRecord] = test

    def __iter__(self) -> Iterator[List[TrialRecord]]:
        return iter((self.train, self.test))

    def __repr__(self):
        return f'<Fold index={self.index} train={len(self.train)} test={len(self.test)}>'


def _collect(directory: Path, part: str, share_root: bool) -> Dict[str, Path]:
    files: Dict[str, Path] = {}
    for path in sorted(directory.rglob('*.txt')):
        if share_root and part not in path.relative_to(directory).parts:
            continue
        if path.stem in files:
            log.warning('%s shadows %s, keeping the first one', path, files[path.stem])
            continue
        files[path.stem] = path
    return files


def _label_index(labels: Dict[LabelKey, ErrorLabel]) -> Dict[Tuple[Task, str], Dict[int, ErrorLabel]]:
    index: Dict[Tuple[Task, str], Dict[int, ErrorLabel]] = defaultdict(dict)
    for (task, trial, gesture_index), label in labels.items():
        try:
            code = trial_code(trial)
        except ValueError as exc:
            raise LabelError(f'line {label.line}: {exc}')
        if gesture_index in index[(task, code)]:
            raise LabelError(f'line {label.line}: duplicate label for {task.value},{code},{gesture_index}')
        index[(task, code)][gesture_index] = label
    return index


def assemble_dataset(
        kin_dir: Union[str, Path],
        transcript_dir: Union[str, Path],
        labels_path: Union[str, Path],
        *,
        provenance: Provenance = Provenance.real,
        seed: Optional[int] = None
) -> DatasetManifest:
    """
    Joins kinematics, transcripts and error labels into a :class:`DatasetManifest`.

    When both directories are the same dataset root, kinematics are the ``*.txt``
    files below a ``kinematics`` folder and transcripts those below a
    ``transcriptions`` folder, as in the JIGSAWS release.

    Raises
    ------
    :class:`LabelError`
        A label disagrees with its transcript segment, or supported instances of a
        labeled trial have no label.
    :class:`DatasetError`
        No trial could be assembled.
    """
    kin_dir, transcript_dir = Path(kin_dir), Path(transcript_dir)
    share_root = kin_dir.resolve() == transcript_dir.resolve()
    kinematics = _collect(kin_dir, 'kinematics', share_root)
    transcripts = _collect(transcript_dir, 'transcriptions', share_root)
    labels = _label_index(parse_error_labels(labels_path))

    trials: List[TrialRecord] = []
    unlabeled: List[str] = []
    used = set()

    for stem, kin_path in kinematics.items():
        if stem not in transcripts:
            log.warning('%s has kinematics but no transcript, skipped', stem)
            continue

        task, subject, repetition = TrialRecord.parse_name(stem)
        code = f'{subject}{repetition:03d}'
        trial_labels = labels.get((task, code))
        if not trial_labels:
            log.warning('%s has no error labels, skipped', stem)
            continue
        used.add((task, code))

        instances: List[GestureInstance] = []
        for index, segment in enumerate(parse_transcript(transcripts[stem]), start=1):
            label = trial_labels.get(index)
            if label is not None and (
                    label.start_frame, label.end_frame, label.gesture
            ) != (segment.start_frame, segment.end_frame, segment.gesture):
                raise LabelError(
                    f'label line {label.line} ({label.gesture.value} {label.start_frame}-{label.end_frame}) does not '
                    f'match {stem} gesture {index} ({segment.gesture.value} {segment.start_frame}-{segment.end_frame})'
                )
            if label is None and segment.gesture.supported:
                unlabeled.append(f'{stem}#{index} ({segment.gesture.value} {segment.start_frame}-{segment.end_frame})')

            instances.append(GestureInstance(
                index=index,
                gesture=segment.gesture,
                start_frame=segment.start_frame,
                end_frame=segment.end_frame,
                error_label=label.error if label is not None and segment.gesture.supported else None,
                error_modes=label.modes if label is not None else (),
            ))

        trials.append(TrialRecord(
            id=stem,
            task=task,
            subject_id=subject,
            repetition_index=repetition,
            samples=parse_kinematics(kin_path),
            gesture_instances=instances,
        ))

    if unlabeled:
        raise LabelError(f'{len(unlabeled)} gesture instances have no error label: {", ".join(unlabeled)}')

    for task, code in sorted(set(labels) - used, key=lambda key: (key[0].value, key[1])):
        log.debug('labels for %s %s match no trial', task.value, code)

    if not trials:
        raise DatasetError(f'no trials could be assembled from {kin_dir}')

    manifest = DatasetManifest(root=kin_dir, trials=trials, provenance=provenance, seed=seed)
    for (task, gesture), (total, erroneous) in manifest.counts().items():
        log.info('%s %s: %d instances, %d erroneous', task.value, gesture.value, total, erroneous)
    return manifest


def split_loso_folds(manifest: Union[DatasetManifest, Sequence[TrialRecord]]) -> List[Fold]:
    """
    Splits trials into the five Leave-One-SuperTrial-Out folds.

    Fold ``j`` tests on every trial with ``repetition_index == j`` and trains on the rest.

    Raises
    ------
    :class:`FoldError`
        A repetition index is outside ``[1, 5]``, or some super trial is missing.
    """
    trials = list(manifest)
    for trial in trials:
        if not 1 <= trial.repetition_index <= N_FOLDS:
            raise FoldError(f'{trial.id}: repetition index {trial.repetition_index} is outside [1, {N_FOLDS}]')

    present = {trial.repetition_index for trial in trials}
    if len(present) < N_FOLDS:
        missing = sorted(set(range(1, N_FOLDS + 1)) - present)
        raise FoldError(f'cannot form {N_FOLDS} folds, no trials for repetitions {missing}')

    return [
        Fold(
            index=j,
            train=[trial for trial in trials if trial.repetition_index != j],
            test=[trial for trial in trials if trial.repetition_index == j],
        )
        for j in range(1, N_FOLDS + 1)
    ]
