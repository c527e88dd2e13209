import json
import struct

import numpy as np
import pytest

from pyegd import (
    MAGIC,
    Architecture,
    ChannelStats,
    CheckpointMetadata,
    ConfigError,
    ManifestMismatch,
    NotACheckpoint,
    TruncatedCheckpoint,
    VersionMismatch,
    WindowConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    small_config,
    train_detector,
)

from conftest import random_windows

HEADER = struct.Struct('<4sI')


def metadata(**changes):
    values = dict(
        stats=ChannelStats(mean=np.linspace(-1, 1, 26), std=np.linspace(1, 2, 26), provenance=['S_B001']),
        setup='gst', task='Suturing', gesture='G3', seed=9, window=WindowConfig(stride=10),
    )
    values.update(changes)
    return CheckpointMetadata(**values)


def rewrite_header(path, edit):
    raw = path.read_bytes()
    _, length = HEADER.unpack_from(raw)
    header = json.loads(raw[HEADER.size:HEADER.size + length])
    edit(header)
    blob = json.dumps(header).encode('utf-8')
    path.write_bytes(HEADER.pack(MAGIC, len(blob)) + blob + raw[HEADER.size + length:])


@pytest.fixture(scope='module')
def trained():
    windows = random_windows(6, 4, shift=1.0)
    detectors = {
        architecture: train_detector(small_config(architecture, seed=1).replace(epochs=2, batch_size=4), windows)
        for architecture in Architecture
    }
    return detectors, windows


@pytest.fixture
def saved(tmp_path, trained):
    detectors, _ = trained
    detector = detectors[Architecture.siamese_cnn]
    path = tmp_path / 'model.egd'
    save_checkpoint(detector.network, metadata(), path, references=detector.references)
    return path


@pytest.mark.parametrize('architecture', list(Architecture), ids=lambda a: a.value)
def test_roundtrip_predicts_identically(tmp_path, trained, architecture):
    detectors, windows = trained
    detector = detectors[architecture]
    path = tmp_path / f'{architecture.value}.egd'

    save_checkpoint(detector.network, metadata(), path, references=detector.references)
    loaded = load_checkpoint(path).detector()

    for window in windows:
        before, after = detector.detect(window), loaded.detect(window)
        assert before.probability == after.probability
        assert before.label == after.label


def test_metadata_roundtrip(saved):
    checkpoint = load_checkpoint(saved)
    meta = checkpoint.metadata
    assert meta.stats == metadata().stats
    assert (meta.setup, meta.task, meta.gesture, meta.seed) == ('gst', 'Suturing', 'G3', 9)
    assert meta.window == WindowConfig(stride=10)
    assert checkpoint.network.architecture is Architecture.siamese_cnn
    assert checkpoint.references.shape == (6, 26, 30)


def test_siamese_needs_references(tmp_path):
    network = build_model(small_config(Architecture.siamese_lstm))
    with pytest.raises(ConfigError):
        save_checkpoint(network, metadata(), tmp_path / 'model.egd')


def test_bad_magic(saved):
    saved.write_bytes(b'NOPE' + saved.read_bytes()[4:])
    with pytest.raises(NotACheckpoint):
        load_checkpoint(saved)


@pytest.mark.parametrize('keep', [6, 40, -4])
def test_truncated(saved, keep):
    saved.write_bytes(saved.read_bytes()[:keep])
    with pytest.raises(TruncatedCheckpoint):
        load_checkpoint(saved)


def test_version_mismatch(saved):
    rewrite_header(saved, lambda header: header.update(format_version=2))
    with pytest.raises(VersionMismatch):
        load_checkpoint(saved)


def test_trailing_bytes(saved):
    saved.write_bytes(saved.read_bytes() + b'\0' * 8)
    with pytest.raises(ManifestMismatch):
        load_checkpoint(saved)


def test_manifest_mismatch(saved):
    rewrite_header(saved, lambda header: header['config'].update(head_widths=[7, 5, 4]))
    with pytest.raises(ManifestMismatch):
        load_checkpoint(saved)


def test_missing_references(saved):
    rewrite_header(saved, lambda header: header.update(references=None))
    with pytest.raises(ManifestMismatch):
        load_checkpoint(saved)
