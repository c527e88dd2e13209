import numpy as np
import pytest

from pyegd import (
    N_RAW_COLUMNS,
    KinematicSequence,
    ParseError,
    RotationError,
    orthonormality_error,
    parse_kinematics,
    write_kinematics,
)

from conftest import random_sequence


def test_columns_roundtrip():
    sequence = random_sequence(12, seed=3)
    table = sequence.to_columns()
    assert table.shape == (12, N_RAW_COLUMNS)

    again = KinematicSequence.from_columns(table)
    np.testing.assert_array_equal(again.rotation, sequence.rotation)
    np.testing.assert_array_equal(again.gripper_angle, sequence.gripper_angle)


def test_write_then_parse(tmp_path):
    sequence = random_sequence(20, seed=1)
    path = tmp_path / 'Suturing_B001.txt'
    write_kinematics(path, sequence)

    parsed = parse_kinematics(path)

    assert len(parsed) == 20
    np.testing.assert_allclose(parsed.position, sequence.position, rtol=1e-6)
    assert orthonormality_error(parsed.rotation).max() < 1e-5


def test_slicing_and_indexing():
    sequence = random_sequence(10)
    part = sequence[2:5]
    assert len(part) == 3
    np.testing.assert_array_equal(part.position, sequence.position[2:5])
    sample = sequence[4]
    np.testing.assert_array_equal(sample.rotation, sequence.rotation[4])
    np.testing.assert_array_equal(KinematicSequence.from_samples([sequence[i] for i in range(10)]).position,
                                  sequence.position)


def test_parse_rejects_wrong_column_count(tmp_path):
    path = tmp_path / 'bad.txt'
    path.write_text(' '.join(['0.0'] * 75) + '\n')
    with pytest.raises(ParseError) as info:
        parse_kinematics(path)
    assert info.value.line == 1


def test_parse_rejects_empty_file(tmp_path):
    path = tmp_path / 'empty.txt'
    path.write_text('\n')
    with pytest.raises(ParseError):
        parse_kinematics(path)


def test_parse_rejects_broken_rotation(tmp_path):
    sequence = random_sequence(3)
    sequence.rotation[1, 0] *= 2.0
    path = tmp_path / 'broken.txt'
    write_kinematics(path, sequence)
    with pytest.raises(RotationError):
        parse_kinematics(path)


def test_missing_file_raises_parse_error(tmp_path):
    with pytest.raises(ParseError, match='cannot read kinematics'):
        parse_kinematics(tmp_path / 'missing.txt')
