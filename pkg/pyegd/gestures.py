from __future__ import annotations

import csv
import logging
import re
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple, Union

from .errors import LabelError, ParseError

__all__ = (
    'Task',
    'Gesture',
    'ErrorMode',
    'SUPPORTED_GESTURES',
    'EXPERIMENT_GESTURES',
    'GESTURE_ERROR_MODES',
    'TranscriptSegment',
    'GestureInstance',
    'ErrorLabel',
    'LabelKey',
    'trial_code',
    'parse_transcript',
    'format_transcript',
    'parse_error_labels',
    'write_error_labels',
)

log = logging.getLogger(__name__)

_TRIAL_CODE = re.compile(r'([A-Z])(\d{3})$')
_GESTURE_TOKEN = re.compile(r'^G(\d+)$')

LABEL_HEADER = ('task', 'trial', 'gesture_index', 'start_frame', 'end_frame', 'gesture', 'error')


class Task(Enum):
    """
    Specifies a dry-lab surgical task.

    .. attribute:: suturing

        The Suturing task.

    .. attribute:: needle_passing

        The Needle Passing task.
    """

    suturing = 'Suturing'
    needle_passing = 'NeedlePassing'

    @property
    def file_prefix(self) -> str:
        """The prefix of the task's kinematics and transcript file names."""
        return 'Suturing' if self is Task.suturing else 'Needle_Passing'

    @property
    def short(self) -> str:
        return 'S' if self is Task.suturing else 'NP'

    @classmethod
    def parse(cls, token: str) -> Task:
        """Resolves ``Suturing``, ``NeedlePassing``, ``Needle_Passing``, ``S`` or ``NP`` (any case)."""
        key = token.strip().replace('_', '').replace('-', '').lower()
        for task in cls:
            if key in (task.value.lower(), task.short.lower()):
                return task
        raise ValueError(f'unknown task {token!r}')


class Gesture(Enum):
    """
    Specifies a surgical gesture from the JIGSAWS vocabulary.

    Only :data:`SUPPORTED_GESTURES` take part in modeling, the remaining
    gestures are parsed and carried along with ``supported=False``.
    """

    G1 = 'G1'
    G2 = 'G2'
    G3 = 'G3'
    G4 = 'G4'
    G5 = 'G5'
    G6 = 'G6'
    G7 = 'G7'
    G8 = 'G8'
    G9 = 'G9'
    G10 = 'G10'
    G11 = 'G11'
    G12 = 'G12'
    G13 = 'G13'
    G14 = 'G14'
    G15 = 'G15'

    @property
    def supported(self) -> bool:
        return self in SUPPORTED_GESTURES

    @property
    def number(self) -> int:
        return int(self.value[1:])

    @classmethod
    def parse(cls, token: str) -> Gesture:
        match = _GESTURE_TOKEN.match(token.strip().upper())
        if not match:
            raise ValueError(f'not a gesture token: {token!r}')
        return cls(f'G{int(match.group(1))}')


class ErrorMode(Enum):
    """
    Specifies a gesture-specific executional error mode.

    .. attribute:: multiple_attempts

        The gesture was attempted more than once.

    .. attribute:: out_of_view

        The instrument left the field of view.

    .. attribute:: needle_orientation

        The needle was held in a wrong orientation.
    """

    multiple_attempts = 'MultipleAttempts'
    out_of_view = 'OutOfView'
    needle_orientation = 'NeedleOrientation'


SUPPORTED_GESTURES: FrozenSet[Gesture] = frozenset(
    (Gesture.G1, Gesture.G2, Gesture.G3, Gesture.G4, Gesture.G6, Gesture.G8, Gesture.G9)
)

# G8 and G9 have too few erroneous examples to be modeled by default.
EXPERIMENT_GESTURES: Tuple[Gesture, ...] = (Gesture.G1, Gesture.G2, Gesture.G3, Gesture.G4, Gesture.G6)

GESTURE_ERROR_MODES: Dict[Gesture, Tuple[ErrorMode, ...]] = {
    Gesture.G1: (ErrorMode.multiple_attempts,),
    Gesture.G2: (ErrorMode.multiple_attempts, ErrorMode.out_of_view),
    Gesture.G3: (ErrorMode.multiple_attempts,),
    Gesture.G4: (ErrorMode.multiple_attempts, ErrorMode.needle_orientation),
    Gesture.G6: (ErrorMode.multiple_attempts, ErrorMode.out_of_view),
    Gesture.G8: (ErrorMode.multiple_attempts, ErrorMode.needle_orientation),
    Gesture.G9: (ErrorMode.multiple_attempts,),
}


class TranscriptSegment(NamedTuple):
    start_frame: int
    end_frame: int
    gesture: Gesture


LabelKey = Tuple[Task, str, int]


class ErrorLabel:
    """
    Represents one row of the error-labels CSV.

    Attributes
    ----------
    error : :class:`int`
        ``0`` for a normal gesture instance, ``1`` for an erroneous one.
    start_frame : :class:`int`
        The first frame of the labeled instance.
    end_frame : :class:`int`
        The last frame of the labeled instance.
    gesture : :class:`Gesture`
        The gesture the label was written for.
    modes : FrozenSet[:class:`ErrorMode`]
        The error modes observed, empty when unknown.
    line : :class:`int`
        The line of the CSV the label came from.
    """

    __slots__ = ('error', 'start_frame', 'end_frame', 'gesture', 'modes', 'line')

    def __init__(
            self,
            *,
            error: int,
            start_frame: int,
            end_frame: int,
            gesture: Gesture,
            modes: FrozenSet[ErrorMode] = frozenset(),
            line: int = 0
    ):
        self.error: int = error
        self.start_frame: int = start_frame
        self.end_frame: int = end_frame
        self.gesture: Gesture = gesture
        self.modes: FrozenSet[ErrorMode] = modes
        self.line: int = line

    def __int__(self) -> int:
        return self.error

    def __eq__(self, other: object) -> bool:
        if isinstance(other, int):
            return self.error == other
        if isinstance(other, ErrorLabel):
            return (
                self.error == other.error and self.start_frame == other.start_frame
                and self.end_frame == other.end_frame and self.gesture is other.gesture
            )
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.error, self.start_frame, self.end_frame, self.gesture))

    def __repr__(self):
        return (
            f'<ErrorLabel error={self.error} start_frame={self.start_frame} end_frame={self.end_frame} '
            f'gesture={self.gesture.value}>'
        )


class GestureInstance:
    """
    Represents one annotated gesture inside a trial.

    Attributes
    ----------
    index : :class:`int`
        The 1-based position of the gesture line in its transcript.
    gesture : :class:`Gesture`
        The gesture class.
    start_frame : :class:`int`
        The first frame of the instance (1-based, inclusive).
    end_frame : :class:`int`
        The last frame of the instance (1-based, inclusive).
    error_label : Optional[:class:`int`]
        ``0`` normal, ``1`` erroneous, ``None`` for unsupported gestures.
    error_modes : FrozenSet[:class:`ErrorMode`]
        The error modes observed in the instance, empty when unknown.
    """

    __slots__ = ('index', 'gesture', 'start_frame', 'end_frame', 'error_label', 'error_modes')

    def __init__(
            self,
            *,
            index: int,
            gesture: Gesture,
            start_frame: int,
            end_frame: int,
            error_label: Optional[int] = None,
            error_modes: Iterable[ErrorMode] = ()
    ):
        if start_frame > end_frame:
            raise ValueError(f'start frame {start_frame} is after end frame {end_frame}')
        self.index: int = index
        self.gesture: Gesture = gesture
        self.start_frame: int = start_frame
        self.end_frame: int = end_frame
        self.error_label: Optional[int] = error_label
        self.error_modes: FrozenSet[ErrorMode] = frozenset(error_modes)

    @property
    def supported(self) -> bool:
        return self.gesture.supported

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1

    @property
    def is_erroneous(self) -> bool:
        return self.error_label == 1

    def __repr__(self):
        return (
            f'<GestureInstance index={self.index} gesture={self.gesture.value} start_frame={self.start_frame} '
            f'end_frame={self.end_frame} error_label={self.error_label}>'
        )


def trial_code(name: str) -> str:
    """
    Returns the ``<subject><repetition>`` code a trial name ends with.

    ``Suturing_B001`` and ``S_B001`` both give ``B001``.

    Raises
    ------
    :class:`ValueError`
        The name does not end with a subject letter and a 3-digit repetition.
    """
    match = _TRIAL_CODE.search(Path(name).stem)
    if not match:
        raise ValueError(f'cannot find a trial code in {name!r}')
    return match.group(0)


def parse_transcript(path: Union[str, Path]) -> List[TranscriptSegment]:
    """
    Parses a JIGSAWS transcript file of ``<start> <end> G<k>`` lines.

    Gestures outside :data:`SUPPORTED_GESTURES` are kept and logged.

    Raises
    ------
    :class:`ParseError`
        The file cannot be read, or a line is malformed, has ``start > end`` or overlaps the previous segment.
    """
    path = Path(path)
    segments: List[TranscriptSegment] = []

    try:
        file = open(path, encoding='utf-8')
    except OSError as exc:
        raise ParseError(f'cannot read transcript: {exc.strerror}', path=str(path))
    with file:
        for number, raw in enumerate(file, start=1):
            tokens = raw.split()
            if not tokens:
                continue

            if len(tokens) != 3:
                raise ParseError(f'expected "<start> <end> G<k>", got {raw.strip()!r}', path=str(path), line=number)

            try:
                start, end = int(tokens[0]), int(tokens[1])
                gesture = Gesture.parse(tokens[2])
            except ValueError as exc:
                raise ParseError(str(exc), path=str(path), line=number)

            if start > end:
                raise ParseError(f'segment starts at {start} after it ends at {end}', path=str(path), line=number)

            if segments and start <= segments[-1].end_frame:
                raise ParseError(
                    f'segment {start}-{end} overlaps {segments[-1].start_frame}-{segments[-1].end_frame}',
                    path=str(path), line=number
                )

            if not gesture.supported:
                log.warning('%s:%d: %s is labeled but unsupported, kept without a model', path, number, gesture.value)

            segments.append(TranscriptSegment(start, end, gesture))

    return segments


def format_transcript(segments: Iterable[TranscriptSegment]) -> str:
    """Serializes segments in the JIGSAWS transcript layout."""
    return ''.join(f'{segment.start_frame} {segment.end_frame} {segment.gesture.value} \n' for segment in segments)


def parse_error_labels(path: Union[str, Path]) -> Dict[LabelKey, ErrorLabel]:
    """
    Parses the error-labels CSV.

    The header must start with ``task,trial,gesture_index,start_frame,end_frame,gesture,error``;
    an optional trailing ``modes`` column holds ``;``-separated :class:`ErrorMode` names.

    Returns
    -------
    Dict[Tuple[:class:`Task`, :class:`str`, :class:`int`], :class:`ErrorLabel`]
        Keyed by task, trial name as written and gesture index.

    Raises
    ------
    :class:`LabelError`
        The file cannot be read, the header is missing, a label is not 0 or 1, or a key is duplicated.
    """
    path = Path(path)
    labels: Dict[LabelKey, ErrorLabel] = {}

    try:
        file = open(path, encoding='utf-8', newline='')
    except OSError as exc:
        raise LabelError(f'{path}: cannot read error labels: {exc.strerror}')
    with file:
        reader = csv.reader(file)
        header = next(reader, None)
        if header is None or tuple(column.strip() for column in header[:len(LABEL_HEADER)]) != LABEL_HEADER:
            raise LabelError(f'{path}: header must be {",".join(LABEL_HEADER)}')
        has_modes = len(header) > len(LABEL_HEADER) and header[len(LABEL_HEADER)].strip() == 'modes'

        for number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(LABEL_HEADER):
                raise LabelError(f'{path}:{number}: expected {len(LABEL_HEADER)} columns, got {len(row)}')

            task_token, trial, index, start, end, gesture_token, error = (cell.strip() for cell in row[:7])
            try:
                task = Task.parse(task_token)
                gesture = Gesture.parse(gesture_token)
                key = (task, trial, int(index))
                start_frame, end_frame = int(start), int(end)
            except ValueError as exc:
                raise LabelError(f'{path}:{number}: {exc}')

            if error not in ('0', '1'):
                raise LabelError(f'{path}:{number}: label must be 0 or 1, got {error!r}')

            if key in labels:
                raise LabelError(f'{path}:{number}: duplicate label for {task.value},{trial},{index}')

            modes: FrozenSet[ErrorMode] = frozenset()
            if has_modes and len(row) > len(LABEL_HEADER) and row[len(LABEL_HEADER)].strip():
                try:
                    modes = frozenset(ErrorMode(token) for token in row[len(LABEL_HEADER)].strip().split(';'))
                except ValueError as exc:
                    raise LabelError(f'{path}:{number}: {exc}')

            labels[key] = ErrorLabel(
                error=int(error), start_frame=start_frame, end_frame=end_frame, gesture=gesture, modes=modes, line=number
            )

    return labels


def write_error_labels(path: Union[str, Path], rows: Iterable[Tuple[Task, str, GestureInstance]]) -> None:
    """Writes an error-labels CSV, including the ``modes`` column, for labeled instances."""
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(LABEL_HEADER + ('modes',))
        for task, trial, instance in rows:
            writer.writerow((
                task.value, trial, instance.index, instance.start_frame, instance.end_frame,
                instance.gesture.value, instance.error_label,
                ';'.join(sorted(mode.value for mode in instance.error_modes))
            ))
