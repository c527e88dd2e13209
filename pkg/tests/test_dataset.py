import pytest

from pyegd import (
    N_FOLDS,
    DatasetError,
    DatasetManifest,
    FoldError,
    Gesture,
    LabelError,
    Provenance,
    Task,
    TrialRecord,
    assemble_dataset,
    split_loso_folds,
    write_kinematics,
)

from conftest import build_trial, random_sequence

HEADER = 'task,trial,gesture_index,start_frame,end_frame,gesture,error\n'


def write_trial(root, stem, transcript, frames=60):
    (root / 'kinematics').mkdir(exist_ok=True)
    (root / 'transcriptions').mkdir(exist_ok=True)
    write_kinematics(root / 'kinematics' / f'{stem}.txt', random_sequence(frames))
    (root / 'transcriptions' / f'{stem}.txt').write_text(transcript)


def test_assemble_joins_labels(tmp_path):
    write_trial(tmp_path, 'Suturing_B001', '1 20 G1 \n21 40 G11 \n41 60 G2 \n')
    labels = tmp_path / 'labels.csv'
    labels.write_text(HEADER + 'Suturing,S_B001,1,1,20,G1,1\nSuturing,S_B001,3,41,60,G2,0\n')

    manifest = assemble_dataset(tmp_path, tmp_path, labels)

    trial, = manifest.trials
    assert (trial.task, trial.subject_id, trial.repetition_index) == (Task.suturing, 'B', 1)
    assert [i.error_label for i in trial.gesture_instances] == [1, None, 0]
    assert [i.gesture for i in trial.labeled_instances()] == [Gesture.G1, Gesture.G2]
    assert manifest.provenance is Provenance.real


def test_assemble_rejects_mismatched_label(tmp_path):
    write_trial(tmp_path, 'Suturing_B001', '1 20 G1 \n21 60 G2 \n')
    labels = tmp_path / 'labels.csv'
    labels.write_text(HEADER + 'Suturing,S_B001,1,1,25,G1,1\nSuturing,S_B001,2,21,60,G2,0\n')
    with pytest.raises(LabelError):
        assemble_dataset(tmp_path, tmp_path, labels)


def test_assemble_rejects_partial_labels(tmp_path):
    write_trial(tmp_path, 'Suturing_B001', '1 20 G1 \n21 60 G2 \n')
    labels = tmp_path / 'labels.csv'
    labels.write_text(HEADER + 'Suturing,S_B001,1,1,20,G1,1\n')
    with pytest.raises(LabelError):
        assemble_dataset(tmp_path, tmp_path, labels)


def test_assemble_skips_unlabeled_trials(tmp_path):
    write_trial(tmp_path, 'Suturing_B001', '1 60 G1 \n')
    write_trial(tmp_path, 'Suturing_C001', '1 60 G1 \n')
    labels = tmp_path / 'labels.csv'
    labels.write_text(HEADER + 'Suturing,Suturing_B001,1,1,60,G1,0\n')

    manifest = assemble_dataset(tmp_path, tmp_path, labels)

    assert [trial.id for trial in manifest] == ['Suturing_B001']


def test_assemble_with_nothing_usable(tmp_path):
    write_trial(tmp_path, 'Suturing_B001', '1 60 G1 \n')
    labels = tmp_path / 'labels.csv'
    labels.write_text(HEADER)
    with pytest.raises(DatasetError):
        assemble_dataset(tmp_path, tmp_path, labels)


def test_trial_rejects_instances_outside_samples():
    trial = build_trial([(Gesture.G1, 30, 0)])
    with pytest.raises(DatasetError):
        TrialRecord(
            id=trial.id, task=trial.task, subject_id='B', repetition_index=1,
            samples=trial.samples[:20], gesture_instances=trial.gesture_instances,
        )


def test_parse_name():
    assert TrialRecord.parse_name('Needle_Passing_C004') == (Task.needle_passing, 'C', 4)
    with pytest.raises(DatasetError):
        TrialRecord.parse_name('Knot_Tying_B001')


def test_split_loso_folds():
    trials = [
        build_trial([(Gesture.G1, 30, 0)], subject=subject, repetition=repetition)
        for subject in 'BC' for repetition in range(1, N_FOLDS + 1)
    ]
    folds = split_loso_folds(trials)

    assert len(folds) == N_FOLDS
    for j, fold in enumerate(folds, start=1):
        assert {trial.repetition_index for trial in fold.test} == {j}
        assert j not in {trial.repetition_index for trial in fold.train}
        assert len(fold.train) + len(fold.test) == len(trials)


def test_split_loso_folds_needs_every_repetition():
    trials = [build_trial([(Gesture.G1, 30, 0)], repetition=repetition) for repetition in (1, 2, 3, 4)]
    with pytest.raises(FoldError):
        split_loso_folds(trials)


def test_manifest_counts():
    trial = build_trial([(Gesture.G1, 30, 1), (Gesture.G2, 30, 0), (Gesture.G2, 30, 1), (Gesture.G11, 20, None)])
    manifest = DatasetManifest(root='.', trials=[trial])
    assert manifest.counts() == {
        (Task.suturing, Gesture.G1): (1, 1),
        (Task.suturing, Gesture.G2): (2, 1),
    }


def test_manifest_rejects_duplicates():
    trial = build_trial([(Gesture.G1, 30, 0)])
    with pytest.raises(DatasetError):
        DatasetManifest(root='.', trials=[trial, trial])
