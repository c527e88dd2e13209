from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .config import DOWNSAMPLE_FACTOR, MIN_PADDED_LENGTH, N_CHANNELS, STD_EPSILON, WINDOW_LENGTH, WINDOW_STRIDE
from .errors import ConfigError, DatasetError, LeakageError, RotationError, ShapeError
from .gestures import Gesture, GestureInstance, Task
from .kinematics import ORTHONORMAL_FAIL_TOLERANCE, KinematicSequence, orthonormality_error

if TYPE_CHECKING:
    from .dataset import TrialRecord

__all__ = (
    'CHANNEL_NAMES',
    'GIMBAL_LOCK_THRESHOLD',
    'rotation_to_euler',
    'euler_to_rotation',
    'extract_feature_channels',
    'downsample',
    'ChannelStats',
    'ChannelStatsAccumulator',
    'fit_channel_stats',
    'fit_trial_stats',
    'normalize',
    'denormalize',
    'WindowConfig',
    'WindowSource',
    'WindowSkip',
    'FeatureWindow',
    'window_offsets',
    'pad_to_window',
    'instance_features',
    'slide_gesture_windows',
    'export_windows_csv',
)

log = logging.getLogger(__name__)

GIMBAL_LOCK_THRESHOLD = 1.0 - 1e-9

_ARM_CHANNELS = (
    'pos_x', 'pos_y', 'pos_z', 'yaw', 'pitch', 'roll',
    'vel_x', 'vel_y', 'vel_z', 'rot_vel_x', 'rot_vel_y', 'rot_vel_z', 'gripper',
)
CHANNEL_NAMES: Tuple[str, ...] = tuple(f'{arm}_{name}' for arm in ('left', 'right') for name in _ARM_CHANNELS)


def rotation_to_euler(rotation: np.ndarray) -> np.ndarray:
    """
    Converts rotation matrices to intrinsic Z-Y-X Euler angles.

    ``pitch = asin(-R[2,0])``, ``yaw = atan2(R[1,0], R[0,0])``, ``roll = atan2(R[2,1], R[2,2])``.
    Within :data:`GIMBAL_LOCK_THRESHOLD` of gimbal lock the roll is set to 0 and the
    whole rotation about the vertical axis is put in ``yaw = atan2(-R[0,1], R[1,1])``.

    Parameters
    ----------
    rotation : :class:`numpy.ndarray`
        An array of shape ``(..., 3, 3)``.

    Raises
    ------
    :class:`RotationError`
        A matrix is off orthonormal by more than the hard tolerance.

    Returns
    -------
    :class:`numpy.ndarray`
        ``(yaw, pitch, roll)`` in radians, shape ``(..., 3)``.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape[-2:] != (3, 3):
        raise ShapeError(f'expected (..., 3, 3) rotation matrices, got {rotation.shape}')
    if rotation.size and np.max(orthonormality_error(rotation)) > ORTHONORMAL_FAIL_TOLERANCE:
        raise RotationError('rotation matrix is not orthonormal')

    r20 = rotation[..., 2, 0]
    pitch = np.arcsin(np.clip(-r20, -1.0, 1.0))
    yaw = np.arctan2(rotation[..., 1, 0], rotation[..., 0, 0])
    roll = np.arctan2(rotation[..., 2, 1], rotation[..., 2, 2])

    locked = np.abs(r20) > GIMBAL_LOCK_THRESHOLD
    if np.any(locked):
        yaw = np.where(locked, np.arctan2(-rotation[..., 0, 1], rotation[..., 1, 1]), yaw)
        roll = np.where(locked, 0.0, roll)

    return np.stack([yaw, pitch, roll], axis=-1)


def euler_to_rotation(yaw: np.ndarray, pitch: np.ndarray, roll: np.ndarray) -> np.ndarray:
    """Composes ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; broadcasts over the angle arrays."""
    yaw, pitch, roll = np.broadcast_arrays(
        np.asarray(yaw, dtype=np.float64), np.asarray(pitch, dtype=np.float64), np.asarray(roll, dtype=np.float64)
    )
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)

    rotation = np.empty(yaw.shape + (3, 3))
    rotation[..., 0, 0] = cy * cp
    rotation[..., 0, 1] = cy * sp * sr - sy * cr
    rotation[..., 0, 2] = cy * sp * cr + sy * sr
    rotation[..., 1, 0] = sy * cp
    rotation[..., 1, 1] = sy * sp * sr + cy * cr
    rotation[..., 1, 2] = sy * sp * cr - cy * sr
    rotation[..., 2, 0] = -sp
    rotation[..., 2, 1] = cp * sr
    rotation[..., 2, 2] = cp * cr
    return rotation


def extract_feature_channels(samples: KinematicSequence) -> np.ndarray:
    """
    Maps raw kinematics to the 26 feature channels.

    Per arm (left then right): position x, y, z; yaw, pitch, roll; linear velocity
    x, y, z; rotational velocity x, y, z; gripper angle. See :data:`CHANNEL_NAMES`.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(26, L)``.
    """
    if not len(samples):
        raise ShapeError('cannot extract features from an empty sample sequence')

    euler = rotation_to_euler(samples.rotation)
    per_arm = np.concatenate([
        samples.position,
        euler,
        samples.linear_velocity,
        samples.rotational_velocity,
        samples.gripper_angle[:, :, None],
    ], axis=2)
    # (L, arm, 13) -> (arm * 13, L)
    return np.ascontiguousarray(per_arm.transpose(1, 2, 0).reshape(N_CHANNELS, len(samples)))


def downsample(matrix: np.ndarray, factor: int = DOWNSAMPLE_FACTOR) -> np.ndarray:
    """Keeps every ``factor``-th column starting at column 0."""
    if factor < 1:
        raise ConfigError(f'downsample factor must be at least 1, got {factor}')
    return np.ascontiguousarray(np.asarray(matrix)[:, ::factor])


class ChannelStats:
    """
    Per-channel mean and standard deviation of a training corpus.

    Attributes
    ----------
    mean : :class:`numpy.ndarray`
        Shape ``(26,)``.
    std : :class:`numpy.ndarray`
        Shape ``(26,)``, clamped to at least ``1e-8``.
    provenance : FrozenSet[:class:`str`]
        The IDs of the trials the statistics were fitted on.
    """

    __slots__ = ('mean', 'std', 'provenance')

    def __init__(self, *, mean: np.ndarray, std: np.ndarray, provenance: Iterable[str] = ()):
        self.mean: np.ndarray = np.asarray(mean, dtype=np.float64).copy()
        self.std: np.ndarray = np.maximum(np.asarray(std, dtype=np.float64), STD_EPSILON)
        self.provenance: FrozenSet[str] = frozenset(provenance)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError(f'mean {self.mean.shape} and std {self.std.shape} must be matching vectors')

    def assert_excludes(self, trial_ids: Iterable[str]) -> None:
        """
        Raises
        ------
        :class:`LeakageError`
            Any of the trials contributed to these statistics.
        """
        leaked = self.provenance.intersection(trial_ids)
        if leaked:
            raise LeakageError(f'channel stats were fitted on evaluated trials: {", ".join(sorted(leaked))}')

    def to_dict(self) -> Dict[str, object]:
        return {'mean': self.mean.tolist(), 'std': self.std.tolist(), 'provenance': sorted(self.provenance)}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> ChannelStats:
        return cls(mean=np.array(data['mean']), std=np.array(data['std']), provenance=data.get('provenance', ()))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ChannelStats) and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std) and self.provenance == other.provenance
        )

    def __repr__(self):
        return f'<ChannelStats channels={len(self.mean)} trials={len(self.provenance)}>'


class ChannelStatsAccumulator:
    """
    Single-pass accumulation of channel statistics over ``(C, L)`` blocks,
    merging block moments pairwise.
    """

    __slots__ = ('count', 'mean', 'm2', 'provenance')

    def __init__(self, channels: int = N_CHANNELS):
        self.count: int = 0
        self.mean: np.ndarray = np.zeros(channels)
        self.m2: np.ndarray = np.zeros(channels)
        self.provenance: set = set()

    def update(self, matrix: np.ndarray, source: Optional[str] = None) -> None:
        matrix = np.asarray(matrix, dtype=np.float64)
        n = matrix.shape[1]
        if n == 0:
            return
        block_mean = matrix.mean(axis=1)
        block_m2 = ((matrix - block_mean[:, None]) ** 2).sum(axis=1)

        total = self.count + n
        delta = block_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + block_m2 + delta ** 2 * (self.count * n / total)
        self.count = total
        if source is not None:
            self.provenance.add(source)

    def finalize(self) -> ChannelStats:
        if not self.count:
            raise DatasetError('cannot fit channel statistics on an empty corpus')
        return ChannelStats(mean=self.mean, std=np.sqrt(self.m2 / self.count), provenance=self.provenance)


def fit_channel_stats(
        matrices: Iterable[Union[np.ndarray, FeatureWindow]],
        provenance: Iterable[str] = ()
) -> ChannelStats:
    """
    Fits per-channel mean and (population) standard deviation over every
    column of every matrix.

    Raises
    ------
    :class:`DatasetError`
        The corpus is empty.
    """
    blocks = [np.asarray(item.data if isinstance(item, FeatureWindow) else item, dtype=np.float64) for item in matrices]
    blocks = [block for block in blocks if block.shape[1]]
    if not blocks:
        raise DatasetError('cannot fit channel statistics on an empty corpus')

    corpus = np.concatenate(blocks, axis=1)
    return ChannelStats(mean=corpus.mean(axis=1), std=corpus.std(axis=1), provenance=provenance)


def normalize(matrix: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return (np.asarray(matrix, dtype=np.float64) - stats.mean[:, None]) / stats.std[:, None]


def denormalize(matrix: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return np.asarray(matrix, dtype=np.float64) * stats.std[:, None] + stats.mean[:, None]


class WindowConfig:
    """
    The windowing parameters.

    Attributes
    ----------
    window_length : :class:`int`
        Samples per window, after downsampling.
    stride : :class:`int`
        Samples between window starts.
    downsample_factor : :class:`int`
        Raw frames per kept sample.
    min_padded_length : :class:`int`
        Shortest downsampled instance that is padded into one window.
    """

    __slots__ = ('window_length', 'stride', 'downsample_factor', 'min_padded_length')

    def __init__(
            self,
            *,
            window_length: int = WINDOW_LENGTH,
            stride: int = WINDOW_STRIDE,
            downsample_factor: int = DOWNSAMPLE_FACTOR,
            min_padded_length: int = MIN_PADDED_LENGTH
    ):
        for name, value in (
                ('window_length', window_length), ('stride', stride),
                ('downsample_factor', downsample_factor), ('min_padded_length', min_padded_length)
        ):
            if int(value) < 1:
                raise ConfigError(f'{name} must be positive, got {value}')
        self.window_length: int = int(window_length)
        self.stride: int = int(stride)
        self.downsample_factor: int = int(downsample_factor)
        self.min_padded_length: int = int(min_padded_length)

    def to_dict(self) -> Dict[str, int]:
        return {name: getattr(self, name) for name in self.__slots__}

    @classmethod
    def from_dict(cls, data: Dict[str, int]) -> WindowConfig:
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise ConfigError(f'unknown window settings: {", ".join(sorted(unknown))}')
        return cls(**data)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WindowConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return (
            f'<WindowConfig window_length={self.window_length} stride={self.stride} '
            f'downsample_factor={self.downsample_factor} min_padded_length={self.min_padded_length}>'
        )


class WindowSource(NamedTuple):
    trial_id: str
    gesture_index: int
    offset: int


class WindowSkip(NamedTuple):
    trial_id: str
    gesture_index: int
    length: int


class FeatureWindow:
    """
    One normalized ``26 x 30`` input window.

    Attributes
    ----------
    data : :class:`numpy.ndarray`
        Shape ``(26, 30)``.
    gesture : :class:`Gesture`
        The gesture of the owning instance.
    task : :class:`Task`
        The task of the owning trial.
    label : :class:`int`
        The error label of the owning instance.
    source : :class:`WindowSource`
        Trial ID, gesture index and window start offset (in downsampled samples).
    """

    __slots__ = ('data', 'gesture', 'task', 'label', 'source')

    def __init__(self, *, data: np.ndarray, gesture: Gesture, task: Task, label: int, source: WindowSource):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != N_CHANNELS:
            raise ShapeError(f'a window must have {N_CHANNELS} channels, got {data.shape}')
        if not np.all(np.isfinite(data)):
            raise ShapeError(f'window {source} holds non-finite values')
        self.data: np.ndarray = data
        self.gesture: Gesture = gesture
        self.task: Task = task
        self.label: int = int(label)
        self.source: WindowSource = source

    @property
    def instance_key(self) -> Tuple[str, int]:
        return self.source.trial_id, self.source.gesture_index

    def __repr__(self):
        return (
            f'<FeatureWindow source={tuple(self.source)} gesture={self.gesture.value} task={self.task.value} '
            f'label={self.label}>'
        )


def window_offsets(length: int, cfg: WindowConfig) -> List[int]:
    """Start offsets of the full windows that fit in ``length`` downsampled samples."""
    if length < cfg.window_length:
        return []
    return list(range(0, length - cfg.window_length + 1, cfg.stride))


def pad_to_window(matrix: np.ndarray, cfg: WindowConfig) -> np.ndarray:
    """Pads a short matrix to the window length by repeating its last column."""
    missing = cfg.window_length - matrix.shape[1]
    if missing <= 0:
        return matrix
    return np.concatenate([matrix, np.repeat(matrix[:, -1:], missing, axis=1)], axis=1)


def instance_features(samples: KinematicSequence, cfg: WindowConfig) -> np.ndarray:
    """Extracts and downsamples the feature channels of one gesture instance."""
    return downsample(extract_feature_channels(samples), cfg.downsample_factor)


def fit_trial_stats(trials: Iterable[TrialRecord], cfg: Optional[WindowConfig] = None) -> ChannelStats:
    """Fits channel statistics on the downsampled labeled gesture instances of ``trials``."""
    cfg = cfg or WindowConfig()
    blocks: List[np.ndarray] = []
    ids: List[str] = []
    for trial in trials:
        ids.append(trial.id)
        for instance in trial.labeled_instances():
            blocks.append(instance_features(trial.instance_samples(instance), cfg))
    if not blocks:
        raise DatasetError('cannot fit channel statistics on an empty corpus')
    return fit_channel_stats(blocks, provenance=ids)


def slide_gesture_windows(
        trial: TrialRecord,
        stats: ChannelStats,
        cfg: Optional[WindowConfig] = None,
        *,
        skips: Optional[List[WindowSkip]] = None,
        gestures: Optional[Sequence[Gesture]] = None
) -> List[FeatureWindow]:
    """
    Cuts the labeled gesture instances of a trial into normalized windows.

    Per instance: slice frames, extract the 26 channels, downsample, normalize,
    then cut windows at offsets ``0, stride, 2 * stride, ...``. An instance whose
    downsampled length lies in ``[min_padded_length, window_length)`` yields one
    window padded with its last column; shorter instances are skipped and
    appended to ``skips``.

    Parameters
    ----------
    trial : :class:`TrialRecord`
        The trial to window.
    stats : :class:`ChannelStats`
        Statistics fitted on training trials.
    cfg : Optional[:class:`WindowConfig`]
        The windowing parameters.
    skips : Optional[List[:class:`WindowSkip`]]
        Receives the instances too short for a window.
    gestures : Optional[Sequence[:class:`Gesture`]]
        Restricts windowing to these gestures.

    Returns
    -------
    List[:class:`FeatureWindow`]
    """
    cfg = cfg or WindowConfig()
    windows: List[FeatureWindow] = []

    for instance in trial.labeled_instances():
        if gestures is not None and instance.gesture not in gestures:
            continue
        windows.extend(_instance_windows(trial, instance, stats, cfg, skips))

    return windows


def _instance_windows(
        trial: TrialRecord,
        instance: GestureInstance,
        stats: ChannelStats,
        cfg: WindowConfig,
        skips: Optional[List[WindowSkip]]
) -> List[FeatureWindow]:
    features = normalize(instance_features(trial.instance_samples(instance), cfg), stats)
    length = features.shape[1]

    def make(data: np.ndarray, offset: int) -> FeatureWindow:
        return FeatureWindow(
            data=data,
            gesture=instance.gesture,
            task=trial.task,
            label=instance.error_label,
            source=WindowSource(trial.id, instance.index, offset),
        )

    if length >= cfg.window_length:
        return [make(features[:, offset:offset + cfg.window_length].copy(), offset) for offset in window_offsets(length, cfg)]

    if length >= cfg.min_padded_length:
        return [make(pad_to_window(features, cfg), 0)]

    log.warning(
        '%s gesture %d (%s) is %d samples long after downsampling, skipped',
        trial.id, instance.index, instance.gesture.value, length
    )
    if skips is not None:
        skips.append(WindowSkip(trial.id, instance.index, length))
    return []


def export_windows_csv(windows: Iterable[FeatureWindow], path: Union[str, Path]) -> None:
    """
    Writes windows channel-major: one row per (window, channel).

    Header: ``trial,gesture_index,offset,task,gesture,label,channel,s0..s29``.
    """
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(
            ['trial', 'gesture_index', 'offset', 'task', 'gesture', 'label', 'channel']
            + [f's{i}' for i in range(WINDOW_LENGTH)]
        )
        for window in windows:
            for channel, values in zip(CHANNEL_NAMES, window.data):
                writer.writerow(
                    [window.source.trial_id, window.source.gesture_index, window.source.offset,
                     window.task.value, window.gesture.value, window.label, channel]
                    + [repr(float(value)) for value in values]
                )
