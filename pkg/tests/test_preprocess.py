import csv

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from pyegd import (
    CHANNEL_NAMES,
    ChannelStats,
    ChannelStatsAccumulator,
    ConfigError,
    Gesture,
    LeakageError,
    RotationError,
    WindowConfig,
    WindowSkip,
    downsample,
    euler_to_rotation,
    export_windows_csv,
    extract_feature_channels,
    fit_channel_stats,
    fit_trial_stats,
    normalize,
    denormalize,
    pad_to_window,
    rotation_to_euler,
    slide_gesture_windows,
    window_offsets,
)


@pytest.fixture
def angles():
    rng = np.random.default_rng(3)
    yaw = rng.uniform(-np.pi, np.pi, 1000)
    pitch = rng.uniform(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3, 1000)
    roll = rng.uniform(-np.pi, np.pi, 1000)
    return yaw, pitch, roll


def test_euler_roundtrip(angles):
    yaw, pitch, roll = angles
    recovered = rotation_to_euler(euler_to_rotation(yaw, pitch, roll))
    np.testing.assert_allclose(recovered, np.stack([yaw, pitch, roll], axis=-1), atol=1e-9)


def test_rotation_matches_intrinsic_zyx(angles):
    yaw, pitch, roll = angles
    expected = Rotation.from_euler('ZYX', np.stack([yaw, pitch, roll], axis=-1)).as_matrix()
    np.testing.assert_allclose(euler_to_rotation(yaw, pitch, roll), expected, atol=1e-12)


@pytest.mark.parametrize('pitch', [np.pi / 2, -np.pi / 2])
def test_gimbal_lock_puts_rotation_in_yaw(pitch):
    yaw, pitch_out, roll = rotation_to_euler(euler_to_rotation(0.3, pitch, 0.0))
    assert roll == 0.0
    assert pitch_out == pytest.approx(pitch)
    assert np.allclose(euler_to_rotation(yaw, pitch_out, roll), euler_to_rotation(0.3, pitch, 0.0), atol=1e-9)


def test_rotation_rejects_non_orthonormal():
    with pytest.raises(RotationError):
        rotation_to_euler(2.0 * np.eye(3))


def test_feature_channel_layout(make_trial):
    trial = make_trial([(Gesture.G1, 40, 0)])
    features = extract_feature_channels(trial.samples)
    assert features.shape == (26, len(trial.samples))
    assert len(CHANNEL_NAMES) == 26

    np.testing.assert_array_equal(features[0:3], trial.samples.position[:, 0].T)
    np.testing.assert_array_equal(features[13:16], trial.samples.position[:, 1].T)
    np.testing.assert_array_equal(features[12], trial.samples.gripper_angle[:, 0])
    np.testing.assert_array_equal(features[25], trial.samples.gripper_angle[:, 1])
    np.testing.assert_allclose(features[3:6].T, rotation_to_euler(trial.samples.rotation[:, 0]))


def test_downsample():
    matrix = np.arange(2 * 7).reshape(2, 7)
    np.testing.assert_array_equal(downsample(matrix, 2), matrix[:, [0, 2, 4, 6]])
    with pytest.raises(ConfigError):
        downsample(matrix, 0)


def test_normalize_roundtrip():
    rng = np.random.default_rng(0)
    corpus = rng.normal(3.0, 2.0, size=(26, 500))
    stats = fit_channel_stats([corpus[:, :200], corpus[:, 200:]])

    np.testing.assert_allclose(stats.mean, corpus.mean(axis=1))
    np.testing.assert_allclose(stats.std, corpus.std(axis=1))
    np.testing.assert_allclose(denormalize(normalize(corpus, stats), stats), corpus)


def test_constant_channel_std_is_clamped():
    stats = fit_channel_stats([np.ones((26, 10))])
    assert np.all(stats.std > 0)
    assert np.all(np.isfinite(normalize(np.ones((26, 3)), stats)))


def test_accumulator_matches_batch_fit():
    rng = np.random.default_rng(1)
    blocks = [rng.normal(size=(26, n)) for n in (5, 40, 1, 17)]
    accumulator = ChannelStatsAccumulator()
    for i, block in enumerate(blocks):
        accumulator.update(block, source=f't{i}')
    streamed = accumulator.finalize()
    batch = fit_channel_stats(blocks)

    np.testing.assert_allclose(streamed.mean, batch.mean)
    np.testing.assert_allclose(streamed.std, batch.std)
    assert streamed.provenance == {'t0', 't1', 't2', 't3'}


def test_stats_serialization_and_leakage():
    stats = ChannelStats(mean=np.arange(26.0), std=np.ones(26), provenance=['S_B001', 'S_C002'])
    assert ChannelStats.from_dict(stats.to_dict()) == stats

    stats.assert_excludes(['S_D001'])
    with pytest.raises(LeakageError):
        stats.assert_excludes(['S_D001', 'S_C002'])


@pytest.mark.parametrize('length, expected', [
    (29, []),
    (30, [0]),
    (49, [0]),
    (50, [0, 20]),
    (75, [0, 20, 40]),
])
def test_window_offsets(length, expected):
    assert window_offsets(length, WindowConfig()) == expected


def test_pad_repeats_last_column():
    matrix = np.arange(26 * 12, dtype=float).reshape(26, 12)
    padded = pad_to_window(matrix, WindowConfig())
    assert padded.shape == (26, 30)
    np.testing.assert_array_equal(padded[:, :12], matrix)
    np.testing.assert_array_equal(padded[:, 12:], np.repeat(matrix[:, -1:], 18, axis=1))


def test_windows_match_brute_force(make_trial):
    trial = make_trial([(Gesture.G1, 120, 0), (Gesture.G11, 30, None), (Gesture.G2, 161, 1)], seed=4)
    stats = fit_trial_stats([trial])
    cfg = WindowConfig()

    windows = slide_gesture_windows(trial, stats, cfg)

    expected = []
    for instance in trial.labeled_instances():
        features = normalize(downsample(extract_feature_channels(trial.instance_samples(instance))), stats)
        for offset in range(features.shape[1] - 29):
            if offset % 20 == 0:
                expected.append((instance.index, offset, features[:, offset:offset + 30]))

    assert [(w.source.gesture_index, w.source.offset) for w in windows] == [(i, o) for i, o, _ in expected]
    for window, (_, _, data) in zip(windows, expected):
        np.testing.assert_array_equal(window.data, data)
    assert {w.label for w in windows if w.gesture is Gesture.G2} == {1}


def test_short_instances_are_padded_or_skipped(make_trial, caplog):
    trial = make_trial([(Gesture.G1, 19, 0), (Gesture.G2, 17, 1), (Gesture.G3, 30, 0)])
    stats = fit_trial_stats([trial])
    skips = []

    windows = slide_gesture_windows(trial, stats, skips=skips)

    assert [(w.gesture, w.source.offset) for w in windows] == [(Gesture.G1, 0), (Gesture.G3, 0)]
    assert skips == [WindowSkip(trial.id, 2, 9)]
    np.testing.assert_array_equal(windows[0].data[:, 10:], np.repeat(windows[0].data[:, 9:10], 20, axis=1))
    assert 'skipped' in caplog.text


def test_gesture_filter(make_trial):
    trial = make_trial([(Gesture.G1, 60, 0), (Gesture.G2, 60, 1)])
    windows = slide_gesture_windows(trial, fit_trial_stats([trial]), gestures=[Gesture.G2])
    assert {w.gesture for w in windows} == {Gesture.G2}


def test_fit_trial_stats_provenance(make_trial):
    trials = [make_trial([(Gesture.G1, 60, 0)], subject=s) for s in 'BC']
    stats = fit_trial_stats(trials)
    assert stats.provenance == {trial.id for trial in trials}


def test_window_config():
    cfg = WindowConfig(stride=10)
    assert WindowConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        WindowConfig(window_length=0)
    with pytest.raises(ConfigError):
        WindowConfig.from_dict({'hop': 3})


def test_export_windows_csv(make_trial, tmp_path):
    trial = make_trial([(Gesture.G1, 60, 1)])
    windows = slide_gesture_windows(trial, fit_trial_stats([trial]))
    path = tmp_path / 'windows.csv'

    export_windows_csv(windows, path)

    with open(path, newline='') as file:
        rows = list(csv.reader(file))
    assert rows[0][:7] == ['trial', 'gesture_index', 'offset', 'task', 'gesture', 'label', 'channel']
    assert len(rows) == 1 + 26 * len(windows)
    assert rows[1][6] == CHANNEL_NAMES[0]
    assert float(rows[1][7]) == windows[0].data[0, 0]
