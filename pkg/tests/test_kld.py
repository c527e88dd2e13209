import csv

import numpy as np
import pytest

from pyegd import DatasetManifest, Gesture, Task, channel_divergence, kld_matrix, symmetric_kl

from conftest import build_trial


def test_symmetric_kl_value():
    assert symmetric_kl([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.137327, abs=1e-6)
    assert symmetric_kl([0.5, 0.5], [0.25, 0.75]) == symmetric_kl([0.25, 0.75], [0.5, 0.5])


def test_identical_histograms_do_not_diverge():
    assert symmetric_kl([3, 0, 1], [3, 0, 1]) == 0.0


def test_empty_bins_stay_finite():
    assert np.isfinite(symmetric_kl([1, 0], [0, 1]))


def test_channel_divergence_grows_with_shift():
    rng = np.random.default_rng(0)
    a = rng.normal(size=2000)
    near = channel_divergence(a, rng.normal(0.1, 1.0, size=2000))
    far = channel_divergence(a, rng.normal(2.0, 1.0, size=2000))
    assert 0.0 < near < far


def test_matrix(synthetic_manifest, tmp_path):
    matrix = kld_matrix(synthetic_manifest, bins=20)

    n = len(matrix.classes)
    assert n > 1
    np.testing.assert_array_equal(matrix.values, matrix.values.T)
    np.testing.assert_array_equal(np.diag(matrix.values), np.zeros(n))
    assert np.all(matrix.values[~np.eye(n, dtype=bool)] > 0)
    a, b = matrix.classes[:2]
    assert matrix[a, b] == matrix.values[0, 1]

    path = tmp_path / 'kld.csv'
    matrix.to_csv(path)
    with open(path, newline='') as file:
        rows = list(csv.reader(file))
    assert rows[0] == ['class'] + [matrix.class_name(key) for key in matrix.classes]
    assert rows[1][1] == '0.000000'
    assert matrix.table().row_count == n


def test_small_classes_are_excluded(caplog):
    trial = build_trial([(Gesture.G1, 80, 0), (Gesture.G2, 12, 0), (Gesture.G3, 60, 1)])
    matrix = kld_matrix(DatasetManifest(root='.', trials=[trial]))
    assert matrix.classes == [(Task.suturing, Gesture.G1)]
    assert 'S-G2' in caplog.text
