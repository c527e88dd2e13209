import csv

import pytest

from pyegd import Architecture, latency_bench, small_config, train_detector

from conftest import random_windows


@pytest.fixture(scope='module')
def detectors():
    windows = random_windows(5, 3)
    return {
        architecture: train_detector(small_config(architecture).replace(epochs=1, batch_size=4), windows)
        for architecture in (Architecture.lstm, Architecture.siamese_cnn)
    }


def test_empty_windows(detectors):
    report = latency_bench(detectors[Architecture.lstm], [])
    assert report.count == 0
    assert report.mean_ms is None and report.p95_ms is None
    assert report.row()['mean_ms'] == ''


def test_counts_every_repetition(detectors):
    windows = random_windows(4, 0, seed=1)
    report = latency_bench(detectors[Architecture.lstm], windows, repetitions=3, warmup=2)
    assert report.count == 12
    assert report.architecture == 'lstm'
    assert report.reference_size is None
    assert 0.0 < report.mean_ms <= report.samples_ms.max()
    assert report.p95_ms <= report.samples_ms.max()


def test_siamese_reports_reference_size(detectors, tmp_path):
    report = latency_bench(detectors[Architecture.siamese_cnn], random_windows(2, 0), warmup=0)
    assert report.reference_size == 5

    path = tmp_path / 'latency.csv'
    report.to_csv(path)
    with open(path, newline='') as file:
        row, = csv.DictReader(file)
    assert row['architecture'] == 'siamese-cnn'
    assert row['windows'] == '2'
    assert row['reference_size'] == '5'
