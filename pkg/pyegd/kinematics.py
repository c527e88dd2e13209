from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union, overload

import numpy as np

from .errors import ParseError, RotationError

__all__ = (
    'ARMS',
    'N_RAW_COLUMNS',
    'COLUMN_MAP',
    'ORTHONORMAL_WARN_TOLERANCE',
    'ORTHONORMAL_FAIL_TOLERANCE',
    'RawKinematicSample',
    'KinematicSequence',
    'orthonormality_error',
    'parse_kinematics',
    'write_kinematics',
)

log = logging.getLogger(__name__)

ARMS: Tuple[str, str] = ('left', 'right')
N_RAW_COLUMNS = 76

ORTHONORMAL_WARN_TOLERANCE = 1e-3
ORTHONORMAL_FAIL_TOLERANCE = 1e-1

# 0-based [start, stop) column ranges. Master-side columns 0-37 are ignored.
# PSM1 is taken as the left hand, PSM2 as the right hand.
COLUMN_MAP: Dict[str, Dict[str, Tuple[int, int]]] = {
    'left': {
        'position': (38, 41),
        'rotation': (41, 50),
        'linear_velocity': (50, 53),
        'rotational_velocity': (53, 56),
        'gripper_angle': (56, 57),
    },
    'right': {
        'position': (57, 60),
        'rotation': (60, 69),
        'linear_velocity': (69, 72),
        'rotational_velocity': (72, 75),
        'gripper_angle': (75, 76),
    },
}


class RawKinematicSample:
    """
    Represents the patient-side kinematics of both arms at one frame.

    Every attribute is an array whose first axis is the arm, ordered as :data:`ARMS`.

    Attributes
    ----------
    position : :class:`numpy.ndarray`
        Tool tip positions in metres, shape ``(2, 3)``.
    rotation : :class:`numpy.ndarray`
        Tool tip rotation matrices, shape ``(2, 3, 3)``.
    linear_velocity : :class:`numpy.ndarray`
        Linear velocities in m/s, shape ``(2, 3)``.
    rotational_velocity : :class:`numpy.ndarray`
        Rotational velocities in rad/s, shape ``(2, 3)``.
    gripper_angle : :class:`numpy.ndarray`
        Gripper angles in radians, shape ``(2,)``.
    """

    __slots__ = ('position', 'rotation', 'linear_velocity', 'rotational_velocity', 'gripper_angle')

    def __init__(
            self,
            *,
            position: np.ndarray,
            rotation: np.ndarray,
            linear_velocity: np.ndarray,
            rotational_velocity: np.ndarray,
            gripper_angle: np.ndarray
    ):
        self.position: np.ndarray = np.asarray(position, dtype=np.float64).reshape(2, 3)
        self.rotation: np.ndarray = np.asarray(rotation, dtype=np.float64).reshape(2, 3, 3)
        self.linear_velocity: np.ndarray = np.asarray(linear_velocity, dtype=np.float64).reshape(2, 3)
        self.rotational_velocity: np.ndarray = np.asarray(rotational_velocity, dtype=np.float64).reshape(2, 3)
        self.gripper_angle: np.ndarray = np.asarray(gripper_angle, dtype=np.float64).reshape(2)

    def __repr__(self):
        return (
            f'<RawKinematicSample position={self.position.tolist()} gripper_angle={self.gripper_angle.tolist()}>'
        )


class KinematicSequence(Sequence[RawKinematicSample]):
    """
    A column-oriented sequence of :class:`RawKinematicSample` recorded at 30 Hz.

    Indexing with an integer returns a :class:`RawKinematicSample`, slicing
    returns another :class:`KinematicSequence` sharing no memory with this one.

    Attributes
    ----------
    position : :class:`numpy.ndarray`
        Shape ``(L, 2, 3)``.
    rotation : :class:`numpy.ndarray`
        Shape ``(L, 2, 3, 3)``.
    linear_velocity : :class:`numpy.ndarray`
        Shape ``(L, 2, 3)``.
    rotational_velocity : :class:`numpy.ndarray`
        Shape ``(L, 2, 3)``.
    gripper_angle : :class:`numpy.ndarray`
        Shape ``(L, 2)``.
    """

    __slots__ = ('position', 'rotation', 'linear_velocity', 'rotational_velocity', 'gripper_angle')

    def __init__(
            self,
            *,
            position: np.ndarray,
            rotation: np.ndarray,
            linear_velocity: np.ndarray,
            rotational_velocity: np.ndarray,
            gripper_angle: np.ndarray
    ):
        length = len(position)
        self.position: np.ndarray = np.asarray(position, dtype=np.float64).reshape(length, 2, 3)
        self.rotation: np.ndarray = np.asarray(rotation, dtype=np.float64).reshape(length, 2, 3, 3)
        self.linear_velocity: np.ndarray = np.asarray(linear_velocity, dtype=np.float64).reshape(length, 2, 3)
        self.rotational_velocity: np.ndarray = np.asarray(rotational_velocity, dtype=np.float64).reshape(length, 2, 3)
        self.gripper_angle: np.ndarray = np.asarray(gripper_angle, dtype=np.float64).reshape(length, 2)

    @classmethod
    def from_columns(cls, table: np.ndarray) -> KinematicSequence:
        """Builds a sequence from an ``(L, 76)`` table laid out as :data:`COLUMN_MAP` describes."""
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2 or table.shape[1] != N_RAW_COLUMNS:
            raise ValueError(f'expected an (L, {N_RAW_COLUMNS}) table, got {table.shape}')

        def take(field: str) -> np.ndarray:
            return np.stack([table[:, slice(*COLUMN_MAP[arm][field])] for arm in ARMS], axis=1)

        return cls(
            position=take('position'),
            rotation=take('rotation').reshape(len(table), 2, 3, 3),
            linear_velocity=take('linear_velocity'),
            rotational_velocity=take('rotational_velocity'),
            gripper_angle=take('gripper_angle')[:, :, 0],
        )

    @classmethod
    def from_samples(cls, samples: Iterable[RawKinematicSample]) -> KinematicSequence:
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls(
            position=np.stack([sample.position for sample in samples]),
            rotation=np.stack([sample.rotation for sample in samples]),
            linear_velocity=np.stack([sample.linear_velocity for sample in samples]),
            rotational_velocity=np.stack([sample.rotational_velocity for sample in samples]),
            gripper_angle=np.stack([sample.gripper_angle for sample in samples]),
        )

    @classmethod
    def empty(cls) -> KinematicSequence:
        return cls(
            position=np.zeros((0, 2, 3)),
            rotation=np.zeros((0, 2, 3, 3)),
            linear_velocity=np.zeros((0, 2, 3)),
            rotational_velocity=np.zeros((0, 2, 3)),
            gripper_angle=np.zeros((0, 2)),
        )

    def to_columns(self) -> np.ndarray:
        """Returns the ``(L, 76)`` table, master-side columns zero."""
        table = np.zeros((len(self), N_RAW_COLUMNS))
        fields = {
            'position': self.position,
            'rotation': self.rotation.reshape(len(self), 2, 9),
            'linear_velocity': self.linear_velocity,
            'rotational_velocity': self.rotational_velocity,
            'gripper_angle': self.gripper_angle[:, :, None],
        }
        for a, arm in enumerate(ARMS):
            for field, values in fields.items():
                table[:, slice(*COLUMN_MAP[arm][field])] = values[:, a]
        return table

    def __len__(self) -> int:
        return len(self.position)

    @overload
    def __getitem__(self, index: int) -> RawKinematicSample:
        ...

    @overload
    def __getitem__(self, index: slice) -> KinematicSequence:
        ...

    def __getitem__(self, index):
        if isinstance(index, slice):
            return KinematicSequence(
                position=self.position[index].copy(),
                rotation=self.rotation[index].copy(),
                linear_velocity=self.linear_velocity[index].copy(),
                rotational_velocity=self.rotational_velocity[index].copy(),
                gripper_angle=self.gripper_angle[index].copy(),
            )
        return RawKinematicSample(
            position=self.position[index],
            rotation=self.rotation[index],
            linear_velocity=self.linear_velocity[index],
            rotational_velocity=self.rotational_velocity[index],
            gripper_angle=self.gripper_angle[index],
        )

    def __repr__(self):
        return f'<KinematicSequence length={len(self)}>'


def orthonormality_error(rotation: np.ndarray) -> np.ndarray:
    """
    Returns ``max |R^T R - I|`` for every matrix in a ``(..., 3, 3)`` array.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    gram = np.einsum('...ji,...jk->...ik', rotation, rotation)
    return np.abs(gram - np.eye(3)).max(axis=(-2, -1))


def _check_rotations(sequence: KinematicSequence, path: Path) -> None:
    if not len(sequence):
        return
    error = orthonormality_error(sequence.rotation).max(axis=1)
    worst = int(np.argmax(error))

    if error[worst] > ORTHONORMAL_FAIL_TOLERANCE:
        raise RotationError(
            f'{path}:{worst + 1}: rotation matrix is not orthonormal (error {error[worst]:.3g})'
        )

    noisy = int(np.count_nonzero(error > ORTHONORMAL_WARN_TOLERANCE))
    if noisy:
        log.warning(
            '%s: %d rows carry rotation matrices off orthonormal by more than %g (worst %.3g at line %d)',
            path, noisy, ORTHONORMAL_WARN_TOLERANCE, error[worst], worst + 1
        )


def parse_kinematics(path: Union[str, Path]) -> KinematicSequence:
    """
    Parses a JIGSAWS kinematics file of whitespace-separated 76-column rows.

    Only the patient-side columns are kept, see :data:`COLUMN_MAP`.

    Raises
    ------
    :class:`ParseError`
        The file cannot be read or is empty, or a row has the wrong column count or a non-numeric token.
    :class:`RotationError`
        A rotation matrix is off orthonormal by more than :data:`ORTHONORMAL_FAIL_TOLERANCE`.

    Returns
    -------
    :class:`KinematicSequence`
    """
    path = Path(path)
    rows: List[List[float]] = []

    try:
        file = open(path, encoding='utf-8')
    except OSError as exc:
        raise ParseError(f'cannot read kinematics: {exc.strerror}', path=str(path))
    with file:
        for number, raw in enumerate(file, start=1):
            tokens = raw.split()
            if not tokens:
                continue
            if len(tokens) != N_RAW_COLUMNS:
                raise ParseError(f'expected {N_RAW_COLUMNS} columns, got {len(tokens)}', path=str(path), line=number)
            try:
                rows.append([float(token) for token in tokens])
            except ValueError as exc:
                raise ParseError(f'non-numeric token ({exc})', path=str(path), line=number)

    if not rows:
        raise ParseError('file holds no kinematic rows', path=str(path))

    sequence = KinematicSequence.from_columns(np.array(rows))
    _check_rotations(sequence, path)
    return sequence


def write_kinematics(path: Union[str, Path], sequence: KinematicSequence) -> None:
    """Writes a sequence in the 76-column JIGSAWS layout with fixed formatting."""
    table = sequence.to_columns()
    with open(path, 'w', encoding='utf-8', newline='\n') as file:
        for row in table:
            file.write('    '.join(f'{value:.6e}' for value in row))
            file.write('\n')
