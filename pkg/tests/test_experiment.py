import numpy as np
import pytest

from pyegd import (
    DEFAULT_SEPARABILITY,
    EXPERIMENT_GESTURES,
    Architecture,
    ConfigError,
    DetectionResult,
    FoldError,
    Gesture,
    ModelConfig,
    SyntheticConfig,
    Task,
    TrainingSetup,
    TuningGrid,
    calibrate_separability,
    nearest_centroid_f1,
    nested_tune,
    predict_instances,
    run_loso,
    train_centroid,
)

from conftest import random_windows


class ScriptedDetector:
    def __init__(self, verdicts):
        self.verdicts = verdicts

    def detect(self, window):
        label = self.verdicts[(window.source.gesture_index, window.source.offset)]
        return DetectionResult(probability=float(label), label=label, elapsed_ms=0.0)


def test_grid_order():
    grid = TuningGrid()
    candidates = list(grid)
    assert len(grid) == len(candidates) == 12
    assert candidates[0] == {'learning_rate': 1e-2, 'batch_size': 16, 'epochs': 50}
    assert candidates[1] == {'learning_rate': 1e-2, 'batch_size': 16, 'epochs': 100}
    assert candidates[2] == {'learning_rate': 1e-2, 'batch_size': 32, 'epochs': 50}
    assert candidates[-1] == {'learning_rate': 1e-4, 'batch_size': 32, 'epochs': 100}


def test_predict_instances_fuses_by_majority():
    windows = random_windows(0, 2)
    for window, offset in zip(windows, (0, 20)):
        window.source = window.source._replace(gesture_index=1, offset=offset)
    extra = random_windows(1, 0, seed=1)[0]
    extra.source = extra.source._replace(gesture_index=2, offset=0)
    detector = ScriptedDetector({(1, 0): 1, (1, 20): 0, (2, 0): 0})

    predictions, window_confusions = predict_instances(detector, windows + [extra])

    assert [(p.gesture_index, p.predicted, p.windows, p.erroneous_windows) for p in predictions] == [
        (1, 1, 2, 1),
        (2, 0, 1, 0),
    ]
    assert window_confusions[(Task.suturing, Gesture.G1)].counts() == (1, 0, 1, 1)


def test_centroid_detector():
    windows = random_windows(5, 5, shift=3.0)
    detector = train_centroid(ModelConfig(), windows)
    assert [detector.detect(w).label for w in windows] == [0] * 5 + [1] * 5


def test_run_loso(synthetic_manifest):
    report = run_loso(
        synthetic_manifest, TrainingSetup.gst, Architecture.cnn, detector_factory=train_centroid
    )

    assert [fold.index for fold in report.folds] == [1, 2, 3, 4, 5]
    assert 0.0 <= report.micro_f1 <= 1.0
    assert report.label == 'GST* cnn'
    assert {gesture for _, gesture in report.confusions} <= set(EXPERIMENT_GESTURES)

    predicted = sum(len(fold.predictions) for fold in report.folds)
    assert report.pooled.total == predicted
    for fold in report.folds:
        assert {p.trial_id for p in fold.predictions} <= {
            trial.id for trial in synthetic_manifest if trial.repetition_index == fold.index
        }


def test_run_loso_is_independent_of_jobs(synthetic_manifest):
    serial = run_loso(synthetic_manifest, TrainingSetup.gts, 'cnn', detector_factory=train_centroid)
    parallel = run_loso(synthetic_manifest, TrainingSetup.gts, 'cnn', detector_factory=train_centroid, jobs=2)
    assert serial.confusions == parallel.confusions
    assert serial.window_confusions == parallel.window_confusions


def test_run_loso_needs_five_folds(synthetic_manifest):
    partial = synthetic_manifest.subset(trial for trial in synthetic_manifest if trial.repetition_index != 3)
    with pytest.raises(FoldError):
        run_loso(partial, TrainingSetup.gst, Architecture.cnn, detector_factory=train_centroid)


def test_nested_tune_singleton_grid(synthetic_manifest):
    grid = TuningGrid(learning_rates=(0.05,), batch_sizes=(8,), epochs=(2,))
    config = nested_tune(list(synthetic_manifest), TrainingSetup.gst, ModelConfig(seed=4), grid)
    assert (config.learning_rate, config.batch_size, config.epochs, config.seed) == (0.05, 8, 2, 4)


def test_nested_tune_ties_go_to_the_first_candidate(synthetic_manifest):
    trials = [trial for trial in synthetic_manifest if trial.repetition_index != 1]
    grid = TuningGrid(learning_rates=(0.1, 0.2), batch_sizes=(8,), epochs=(2,))
    config = nested_tune(trials, TrainingSetup.gst, ModelConfig(), grid, detector_factory=train_centroid)
    assert config.learning_rate == 0.1


def test_nested_tune_rejects(synthetic_manifest):
    trials = list(synthetic_manifest)
    with pytest.raises(ConfigError):
        nested_tune(trials, TrainingSetup.gst, ModelConfig(), TuningGrid(epochs=()))
    with pytest.raises(FoldError):
        nested_tune(
            [trial for trial in trials if trial.repetition_index == 1], TrainingSetup.gst, ModelConfig(), TuningGrid()
        )


def test_calibrate_separability(tmp_path):
    cfg = SyntheticConfig(subjects=('B',), tasks=(Task.suturing,), cycles=(1, 2))
    separability, f1 = calibrate_separability(cfg, 3, target=(0.0, 1.0), high=2.0, iterations=3, workdir=tmp_path)
    assert separability == 1.0
    assert 0.0 <= f1 <= 1.0
    with pytest.raises(ConfigError):
        calibrate_separability(cfg, 3, target=(0.9, 0.1))


@pytest.mark.slow
def test_run_loso_trains_networks(synthetic_manifest):
    config = ModelConfig(Architecture.cnn, conv_filters=(4, 4), head_widths=(8,), epochs=2, batch_size=16)
    report = run_loso(synthetic_manifest, TrainingSetup.gtt, Architecture.cnn, config)
    assert len(report.folds) == 5
    assert np.isfinite(report.micro_f1)


ACCEPTANCE = dict(
    conv_filters=(16, 8), head_widths=(32, 16), lstm_hidden=16, lstm_layers=1, epochs=20, batch_size=32,
    pair_cap=4000, reference_cap=25,
)


@pytest.mark.slow
def test_default_dataset_baseline_in_band(default_manifest):
    assert 0.70 <= nearest_centroid_f1(default_manifest) <= 0.80


@pytest.mark.slow
def test_default_separability_is_calibrated(tmp_path):
    separability, f1 = calibrate_separability(SyntheticConfig(), 7, iterations=1, workdir=tmp_path)
    assert separability == DEFAULT_SEPARABILITY
    assert 0.70 <= f1 <= 0.80


@pytest.mark.slow
@pytest.mark.parametrize('architecture', [Architecture.siamese_cnn, Architecture.siamese_lstm])
def test_siamese_detects_default_dataset(default_manifest, architecture):
    config = ModelConfig(architecture, **ACCEPTANCE)
    report = run_loso(default_manifest, TrainingSetup.gst, architecture, config, jobs=4)
    assert len(report.folds) == 5
    assert report.micro_f1 >= 0.85


@pytest.mark.slow
@pytest.mark.parametrize('siamese, single', [
    (Architecture.siamese_cnn, Architecture.cnn),
    (Architecture.siamese_lstm, Architecture.lstm),
])
def test_siamese_keeps_up_with_single_network(default_manifest, siamese, single):
    def mean_f1(architecture):
        scores = [
            run_loso(default_manifest, TrainingSetup.gst, architecture,
                     ModelConfig(architecture, seed=seed, **ACCEPTANCE), jobs=4).micro_f1
            for seed in (0, 1, 2)
        ]
        return float(np.mean(scores))

    assert mean_f1(siamese) >= mean_f1(single) - 0.02
