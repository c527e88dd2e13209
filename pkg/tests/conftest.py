import logging
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pytest

from pyegd import (
    FeatureWindow,
    Gesture,
    GestureInstance,
    KinematicSequence,
    SyntheticConfig,
    Task,
    TrialRecord,
    WindowSource,
    euler_to_rotation,
    generate_synthetic,
)

# (gesture, raw frames, error label)
GestureSpec = Tuple[Gesture, int, Optional[int]]


def random_sequence(length: int, seed: int = 0) -> KinematicSequence:
    rng = np.random.default_rng(seed)
    yaw = rng.uniform(-np.pi, np.pi, size=(length, 2))
    pitch = rng.uniform(-1.2, 1.2, size=(length, 2))
    roll = rng.uniform(-np.pi, np.pi, size=(length, 2))
    return KinematicSequence(
        position=rng.normal(0.0, 0.05, size=(length, 2, 3)),
        rotation=euler_to_rotation(yaw, pitch, roll),
        linear_velocity=rng.normal(0.0, 0.01, size=(length, 2, 3)),
        rotational_velocity=rng.normal(0.0, 0.4, size=(length, 2, 3)),
        gripper_angle=rng.normal(0.0, 0.3, size=(length, 2)),
    )


def build_trial(
        specs: Sequence[GestureSpec],
        *,
        task: Task = Task.suturing,
        subject: str = 'B',
        repetition: int = 1,
        seed: int = 0,
        lead: int = 5
) -> TrialRecord:
    instances = []
    frame = lead + 1
    for index, (gesture, length, label) in enumerate(specs, start=1):
        instances.append(GestureInstance(
            index=index, gesture=gesture, start_frame=frame, end_frame=frame + length - 1,
            error_label=label if gesture.supported else None,
        ))
        frame += length
    return TrialRecord(
        id=f'{task.file_prefix}_{subject}{repetition:03d}',
        task=task,
        subject_id=subject,
        repetition_index=repetition,
        samples=random_sequence(frame + 4, seed),
        gesture_instances=instances,
    )


def random_windows(n_normal: int, n_erroneous: int, *, seed: int = 0, shift: float = 0.0,
                   gesture: Gesture = Gesture.G1, task: Task = Task.suturing, trial: str = 'S_B001'):
    """Normal windows around 0 and erroneous ones around ``shift``, one instance each."""
    rng = np.random.default_rng(seed)
    windows = []
    for i in range(n_normal + n_erroneous):
        label = int(i >= n_normal)
        windows.append(FeatureWindow(
            data=rng.standard_normal((26, 30)) + shift * label,
            gesture=gesture, task=task, label=label, source=WindowSource(trial, i + 1, 0),
        ))
    return windows


@pytest.fixture
def make_trial() -> Callable[..., TrialRecord]:
    return build_trial


@pytest.fixture(scope='session')
def synthetic_config() -> SyntheticConfig:
    return SyntheticConfig(subjects=('B', 'C'), tasks=(Task.suturing,), cycles=(1, 2), separability=2.0)


@pytest.fixture(scope='session')
def synthetic_manifest(tmp_path_factory, synthetic_config):
    return generate_synthetic(synthetic_config, 7, tmp_path_factory.mktemp('synthetic'))


@pytest.fixture(autouse=True)
def reset_package_logger():
    yield
    logger = logging.getLogger('pyegd')
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
    logger.propagate = True


@pytest.fixture(scope='session')
def default_manifest(tmp_path_factory):
    return generate_synthetic(SyntheticConfig(), 7, tmp_path_factory.mktemp('default'))
