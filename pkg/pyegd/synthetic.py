from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import SAMPLE_RATE_HZ, VERSION
from .dataset import DatasetManifest, Provenance, assemble_dataset
from .errors import ConfigError
from .gestures import (
    GESTURE_ERROR_MODES,
    ErrorMode,
    Gesture,
    GestureInstance,
    Task,
    TranscriptSegment,
    format_transcript,
    write_error_labels,
)
from .kinematics import KinematicSequence, write_kinematics
from .preprocess import euler_to_rotation

__all__ = (
    'DEFAULT_SEPARABILITY',
    'SyntheticConfig',
    'synthesize_instance',
    'generate_synthetic',
)

log = logging.getLogger(__name__)

# Frozen separability of the default synthetic dataset: at seed 7 the LOSO
# nearest-centroid baseline reaches an instance micro F1 within [0.70, 0.80].
DEFAULT_SEPARABILITY = 2.0

# Mean gesture durations in raw frames.
_DURATIONS: Dict[Gesture, int] = {
    Gesture.G1: 75,
    Gesture.G2: 90,
    Gesture.G3: 140,
    Gesture.G4: 80,
    Gesture.G5: 60,
    Gesture.G6: 110,
    Gesture.G8: 80,
    Gesture.G9: 60,
    Gesture.G11: 70,
}
_CYCLE: Tuple[Gesture, ...] = (Gesture.G2, Gesture.G3, Gesture.G6, Gesture.G4)

# Per-arm channel scales: position (m), Euler (rad), linear velocity (m/s),
# rotational velocity (rad/s), gripper (rad).
_ARM_SCALE = np.array([0.01] * 3 + [0.25] * 3 + [0.01] * 3 + [0.4] * 3 + [0.3])
_SCALE = np.concatenate([_ARM_SCALE, _ARM_SCALE])
_ARM_OFFSET_RANGE = np.array([0.05] * 3 + [0.6] * 3 + [0.0] * 3 + [0.0] * 3 + [0.5])
_OFFSET_RANGE = np.concatenate([_ARM_OFFSET_RANGE, _ARM_OFFSET_RANGE])

_POSITION = np.array([0, 1, 2, 13, 14, 15])
_EULER = np.array([3, 4, 5, 16, 17, 18])
_LINEAR_VELOCITY = np.array([6, 7, 8, 19, 20, 21])
_VELOCITY = np.array([6, 7, 8, 9, 10, 11, 19, 20, 21, 22, 23, 24])
_GRIPPER = np.array([12, 25])
_PITCH = np.array([4, 17])
_N_TONES = 3

# Systematic velocity bias of an erroneous gesture, in channel scales per unit separability.
_BIAS_GAIN = 4.0
# Share of erroneous gestures whose bias runs against the gesture's habitual direction.
_OPPOSITE_SHARE = 0.4


class SyntheticConfig:
    """
    Parameters of a synthetic JIGSAWS-format dataset.

    Attributes
    ----------
    subjects : Tuple[:class:`str`, ...]
        Subject letters; each performs every repetition of every task.
    repetitions : :class:`int`
        Repetitions per subject and task, at most 5.
    tasks : Tuple[:class:`Task`, ...]
        The tasks to generate.
    error_rate : :class:`float`
        Probability that a supported gesture instance is erroneous.
    separability : :class:`float`
        Scale of injected error magnitudes.
    noise : :class:`float`
        Gaussian noise per channel, relative to the channel scale.
    cycles : Tuple[:class:`int`, :class:`int`]
        Inclusive range of ``G2 G3 G6 G4`` cycles per trial.
    duration_jitter : :class:`float`
        Relative spread of gesture durations.
    """

    __slots__ = ('subjects', 'repetitions', 'tasks', 'error_rate', 'separability', 'noise', 'cycles', 'duration_jitter')

    def __init__(
            self,
            *,
            subjects: Sequence[str] = ('B', 'C', 'D', 'E', 'F', 'G', 'H', 'I'),
            repetitions: int = 5,
            tasks: Sequence[Task] = (Task.suturing, Task.needle_passing),
            error_rate: float = 0.4,
            separability: float = DEFAULT_SEPARABILITY,
            noise: float = 0.15,
            cycles: Tuple[int, int] = (3, 5),
            duration_jitter: float = 0.25
    ):
        if not 0.0 <= error_rate <= 1.0:
            raise ConfigError(f'error rate must lie in [0, 1], got {error_rate}')
        if not 1 <= repetitions <= 5:
            raise ConfigError(f'repetitions must lie in [1, 5], got {repetitions}')
        if not subjects or any(len(subject) != 1 or not subject.isupper() for subject in subjects):
            raise ConfigError('subjects must be single upper-case letters')
        if len(set(subjects)) != len(subjects):
            raise ConfigError('subjects must be distinct')
        if separability < 0 or noise < 0 or not 0 <= duration_jitter < 1:
            raise ConfigError('separability and noise must be non-negative, duration jitter in [0, 1)')
        if not 1 <= cycles[0] <= cycles[1]:
            raise ConfigError(f'invalid cycle range {cycles}')

        self.subjects: Tuple[str, ...] = tuple(subjects)
        self.repetitions: int = int(repetitions)
        self.tasks: Tuple[Task, ...] = tuple(tasks)
        self.error_rate: float = float(error_rate)
        self.separability: float = float(separability)
        self.noise: float = float(noise)
        self.cycles: Tuple[int, int] = (int(cycles[0]), int(cycles[1]))
        self.duration_jitter: float = float(duration_jitter)

    @classmethod
    def for_trials(cls, trials: int, **kwargs: Any) -> SyntheticConfig:
        """Builds a config with ``trials`` trials per task over five repetitions."""
        if trials < 5 or trials % 5:
            raise ConfigError(f'the trial count per task must be a positive multiple of 5, got {trials}')
        n_subjects = trials // 5
        if n_subjects > 25:
            raise ConfigError('at most 125 trials per task are supported')
        return cls(subjects=tuple(chr(ord('B') + i) for i in range(n_subjects)), **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'subjects': list(self.subjects),
            'repetitions': self.repetitions,
            'tasks': [task.value for task in self.tasks],
            'error_rate': self.error_rate,
            'separability': self.separability,
            'noise': self.noise,
            'cycles': list(self.cycles),
            'duration_jitter': self.duration_jitter,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> SyntheticConfig:
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise ConfigError(f'unknown synthetic settings: {", ".join(sorted(unknown))}')
        data = dict(data)
        if 'tasks' in data:
            data['tasks'] = tuple(Task.parse(task) for task in data['tasks'])
        if 'cycles' in data:
            data['cycles'] = tuple(data['cycles'])
        return cls(**data)

    def __repr__(self):
        return (
            f'<SyntheticConfig subjects={len(self.subjects)} repetitions={self.repetitions} '
            f'error_rate={self.error_rate} separability={self.separability}>'
        )


class _Prototype:
    __slots__ = ('offset', 'amplitude', 'frequency', 'phase')

    def __init__(self, rng: np.random.Generator):
        self.offset = rng.uniform(-1.0, 1.0, size=26) * _OFFSET_RANGE
        self.amplitude = rng.uniform(0.2, 1.0, size=(26, _N_TONES)) / _N_TONES
        # Band-limited: every tone stays below 2 Hz.
        self.frequency = rng.uniform(0.15, 2.0, size=(26, _N_TONES))
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(26, _N_TONES))


def _library(seed: int, tasks: Sequence[Task]) -> Dict[Tuple[Task, Gesture], _Prototype]:
    rng = np.random.default_rng([seed, 1])
    shared = {gesture: _Prototype(rng) for gesture in _DURATIONS}
    library: Dict[Tuple[Task, Gesture], _Prototype] = {}
    for task in Task:
        for gesture, base in shared.items():
            variant = _Prototype(rng)
            # The same gesture stays close across tasks.
            variant.offset = base.offset + 0.15 * (variant.offset - base.offset)
            variant.amplitude = base.amplitude + 0.15 * (variant.amplitude - base.amplitude)
            variant.frequency = base.frequency + 0.1 * (variant.frequency - base.frequency)
            variant.phase = base.phase
            if task in tasks:
                library[(task, gesture)] = variant
    return library


def _habits(seed: int) -> Dict[Tuple[Gesture, ErrorMode], np.ndarray]:
    """Habitual bias directions over the velocity channels, one unit vector per gesture and error mode."""
    rng = np.random.default_rng([seed, 4])
    habits: Dict[Tuple[Gesture, ErrorMode], np.ndarray] = {}
    for gesture, modes in GESTURE_ERROR_MODES.items():
        for mode in modes:
            direction = rng.normal(size=len(_VELOCITY))
            habits[(gesture, mode)] = direction / np.linalg.norm(direction)
    return habits


def synthesize_instance(
        prototype: _Prototype,
        length: int,
        rng: np.random.Generator,
        *,
        noise: float,
        subject_offset: np.ndarray
) -> np.ndarray:
    """
    Draws one normal gesture in feature space, ``(26, length)``: the prototype's
    per-channel sum of sinusoids, a random phase jitter and Gaussian noise.
    """
    t = np.arange(length) / SAMPLE_RATE_HZ
    jitter = rng.normal(0.0, 0.35, size=(26, 1))
    tones = prototype.amplitude[:, :, None] * np.sin(
        2 * np.pi * prototype.frequency[:, :, None] * t[None, None, :] + (prototype.phase + jitter)[:, :, None]
    )
    signal = tones.sum(axis=1) * _SCALE[:, None]
    signal += (prototype.offset + subject_offset)[:, None]
    signal += rng.normal(0.0, noise, size=signal.shape) * _SCALE[:, None]
    return signal


def _inject(signal: np.ndarray, mode: ErrorMode, delta: float, habit: np.ndarray, rng: np.random.Generator) -> None:
    length = signal.shape[1]
    # Every erroneous gesture drifts along its habitual velocity direction, or against it.
    sign = -1.0 if rng.random() < _OPPOSITE_SHARE else 1.0
    signal[_VELOCITY] += sign * _BIAS_GAIN * delta * _SCALE[_VELOCITY, None] * habit[:, None]

    ramp = np.linspace(0.0, 1.0, length)

    if mode is ErrorMode.multiple_attempts:
        # Repeat the approach motion: the first third's oscillation is replayed later on.
        span = max(length // 3, 1)
        start = int(rng.integers(span, max(length - span, span) + 1)) if length > 2 * span else 0
        stop = min(start + span, length)
        segment = signal[:, :stop - start]
        channels = np.concatenate([_POSITION, _LINEAR_VELOCITY, _GRIPPER])
        replay = segment[channels] - segment[channels].mean(axis=1, keepdims=True)
        signal[channels, start:stop] += 2.5 * delta * replay
        signal[_GRIPPER, start:stop] += delta * _SCALE[_GRIPPER, None] * np.sin(np.linspace(0, 2 * np.pi, stop - start))

    elif mode is ErrorMode.out_of_view:
        direction = rng.normal(size=len(_POSITION))
        direction /= np.linalg.norm(direction)
        drift = 4.0 * delta * _SCALE[_POSITION, None] * direction[:, None] * ramp[None, :]
        signal[_POSITION] += drift
        signal[_LINEAR_VELOCITY] += np.gradient(drift, axis=1) * SAMPLE_RATE_HZ

    elif mode is ErrorMode.needle_orientation:
        sign = rng.choice([-1.0, 1.0], size=len(_EULER))
        wobble = np.sin(2 * np.pi * 1.2 * np.arange(length) / SAMPLE_RATE_HZ)
        signal[_EULER] += delta * 0.5 * sign[:, None] * (ramp[None, :] + 0.3 * wobble[None, :])

    # Keep pitch away from gimbal lock so Euler angles survive the round trip.
    signal[_PITCH] = np.clip(signal[_PITCH], -1.4, 1.4)


def _to_sequence(features: np.ndarray) -> KinematicSequence:
    length = features.shape[1]
    per_arm = features.reshape(2, 13, length).transpose(2, 0, 1)
    return KinematicSequence(
        position=per_arm[:, :, 0:3],
        rotation=euler_to_rotation(per_arm[:, :, 3], per_arm[:, :, 4], per_arm[:, :, 5]),
        linear_velocity=per_arm[:, :, 6:9],
        rotational_velocity=per_arm[:, :, 9:12],
        gripper_angle=per_arm[:, :, 12],
    )


def _gesture_sequence(task: Task, cfg: SyntheticConfig, rng: np.random.Generator) -> List[Gesture]:
    sequence = [Gesture.G1]
    for _ in range(int(rng.integers(cfg.cycles[0], cfg.cycles[1] + 1))):
        if rng.random() < 0.1:
            sequence.append(Gesture.G8)
        sequence.extend(_CYCLE)
        if rng.random() < 0.1:
            sequence.append(Gesture.G5)
    if task is Task.suturing and rng.random() < 0.3:
        sequence.append(Gesture.G9)
    sequence.append(Gesture.G11)
    return sequence


def _trial(
        task: Task,
        subject: int,
        repetition: int,
        cfg: SyntheticConfig,
        seed: int,
        library: Dict[Tuple[Task, Gesture], _Prototype],
        habits: Dict[Tuple[Gesture, ErrorMode], np.ndarray]
) -> Tuple[KinematicSequence, List[GestureInstance]]:
    rng = np.random.default_rng([seed, 2, list(Task).index(task), subject, repetition])
    subject_rng = np.random.default_rng([seed, 3, subject])
    subject_offset = subject_rng.normal(0.0, 0.1, size=26) * _OFFSET_RANGE

    idle = 15
    blocks: List[np.ndarray] = [
        (library[(task, Gesture.G1)].offset + subject_offset)[:, None]
        + rng.normal(0.0, cfg.noise, size=(26, idle)) * _SCALE[:, None]
    ]
    instances: List[GestureInstance] = []
    frame = idle + 1

    for index, gesture in enumerate(_gesture_sequence(task, cfg, rng), start=1):
        mean = _DURATIONS[gesture]
        length = max(int(round(mean * (1.0 + rng.uniform(-cfg.duration_jitter, cfg.duration_jitter)))), 2)
        signal = synthesize_instance(library[(task, gesture)], length, rng, noise=cfg.noise, subject_offset=subject_offset)

        label: Optional[int] = None
        modes: Tuple[ErrorMode, ...] = ()
        if gesture.supported:
            label = int(rng.random() < cfg.error_rate)
            if label:
                choices = GESTURE_ERROR_MODES[gesture]
                mode = choices[int(rng.integers(len(choices)))]
                _inject(signal, mode, cfg.separability, habits[(gesture, mode)], rng)
                modes = (mode,)

        blocks.append(signal)
        instances.append(GestureInstance(
            index=index, gesture=gesture, start_frame=frame, end_frame=frame + length - 1,
            error_label=label, error_modes=modes,
        ))
        frame += length

    return _to_sequence(np.concatenate(blocks, axis=1)), instances


def generate_synthetic(
        cfg: SyntheticConfig,
        seed: int,
        out: Union[str, Path]
) -> DatasetManifest:
    """
    Writes a synthetic dataset in the JIGSAWS layout and assembles it.

    Normal gestures are gesture-specific sums of band-limited sinusoids with
    Gaussian noise. Erroneous gestures drift along a habitual velocity
    direction of their gesture and error mode, against it for a fixed share of
    them, and carry one error mode allowed for their
    gesture: ``MultipleAttempts`` replays an oscillation segment,
    ``OutOfView`` adds a position drift, ``NeedleOrientation`` perturbs the
    Euler channels. Magnitudes scale with ``cfg.separability``.

    The output is a pure function of ``(cfg, seed)``.

    Returns
    -------
    :class:`DatasetManifest`
        The dataset as re-read from the written files.
    """
    out = Path(out)
    library = _library(seed, cfg.tasks)
    habits = _habits(seed)
    label_rows = []

    for task in cfg.tasks:
        kin_dir = out / task.file_prefix / 'kinematics' / 'AllGestures'
        transcript_dir = out / task.file_prefix / 'transcriptions'
        kin_dir.mkdir(parents=True, exist_ok=True)
        transcript_dir.mkdir(parents=True, exist_ok=True)

        for s, subject in enumerate(cfg.subjects):
            for repetition in range(1, cfg.repetitions + 1):
                code = f'{subject}{repetition:03d}'
                stem = f'{task.file_prefix}_{code}'
                samples, instances = _trial(task, s, repetition, cfg, seed, library, habits)

                write_kinematics(kin_dir / f'{stem}.txt', samples)
                (transcript_dir / f'{stem}.txt').write_text(
                    format_transcript(
                        TranscriptSegment(instance.start_frame, instance.end_frame, instance.gesture)
                        for instance in instances
                    ),
                    encoding='utf-8',
                )
                label_rows.extend(
                    (task, f'{task.short}_{code}', instance) for instance in instances if instance.supported
                )

    labels_path = out / 'labels.csv'
    write_error_labels(labels_path, label_rows)
    (out / 'synthetic.json').write_text(
        json.dumps({'seed': seed, 'config': cfg.to_dict(), 'tool_version': VERSION}, indent=2, sort_keys=True) + '\n', encoding='utf-8'
    )
    log.info('wrote %d synthetic trials to %s', len(cfg.subjects) * cfg.repetitions * len(cfg.tasks), out)

    return assemble_dataset(out, out, labels_path, provenance=Provenance.synthetic, seed=seed)
