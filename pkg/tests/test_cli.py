import csv
import filecmp
import json

import pytest

from pyegd.cli import build_parser, main

SMALL = json.dumps({'tasks': ['suturing'], 'cycles': [1, 2]})


@pytest.fixture(scope='module')
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp('cli-synth')
    assert main(['synth', '--trials', '10', '--seed', '5', '--config', SMALL, '--out', str(out)]) == 0
    return out


def test_missing_command_is_usage_error(capsys):
    assert main([]) == 1
    assert 'a command is required' in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(['stats', '--no-such-flag']) == 1
    assert 'usage: pyegd' in capsys.readouterr().err


def test_unknown_model_choice_is_usage_error():
    assert main(['loso', '--model', 'transformer']) == 1


@pytest.mark.parametrize('argv', [
    ['train', '--setup', 'gsts', '--gesture', 'G2'],
    ['train', '--setup', 'gst'],
    ['train', '--setup', 'gtt', '--task', 'suturing'],
    ['train', '--setup', 'gts', '--task', 'suturing', '--gesture', 'G2'],
    ['train', '--setup', 'xyz', '--all'],
])
def test_train_flag_validation(tmp_path, argv):
    assert main(argv + ['--data', str(tmp_path), '--out', str(tmp_path / 'model.egd')]) == 1
    assert not (tmp_path / 'model.egd').exists()


def test_required_flags_are_reported(tmp_path, capsys):
    assert main(['loso', '--out', str(tmp_path / 'loso.csv')]) == 1
    assert 'loso needs --data' in capsys.readouterr().err


@pytest.mark.parametrize('argv', [
    ['kld', '--bins', '0'],
    ['loso', '--jobs', '0'],
    ['stats', '--gestures', 'G7'],
    ['stats', '--gestures', 'G99'],
    ['windows', '--config', '[1, 2]'],
])
def test_invalid_values_are_rejected(synth_dir, tmp_path, argv):
    assert main(argv + ['--data', str(synth_dir), '--out', str(tmp_path / 'out.csv')]) == 1


def test_calibrate_rejects_empty_range(tmp_path):
    assert main(['calibrate', '--low', '2', '--high', '1', '--out', str(tmp_path / 'c.json')]) == 1


def test_synth_is_deterministic(tmp_path):
    first, second = tmp_path / 'a', tmp_path / 'b'
    for out in (first, second):
        assert main(['synth', '--trials', '5', '--seed', '3', '--config', SMALL, '--out', str(out)]) == 0
    comparison = filecmp.dircmp(first, second)
    assert comparison.left_list == comparison.right_list
    _, mismatch, errors = filecmp.cmpfiles(first, second, comparison.common_files, shallow=False)
    assert not mismatch and not errors
    assert json.loads((first / 'synthetic.json').read_text())['seed'] == 3


def test_synth_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('EGD_SEED', '11')
    assert main(['synth', '--trials', '5', '--config', SMALL, '--out', str(tmp_path)]) == 0
    assert json.loads((tmp_path / 'synthetic.json').read_text())['seed'] == 11


def test_stats_counts_every_setup(synth_dir, tmp_path):
    out = tmp_path / 'stats.csv'
    assert main(['stats', '--data', str(synth_dir), '--out', str(out)]) == 0
    with open(out, encoding='utf-8') as file:
        rows = list(csv.DictReader(file))
    assert {row['setup'] for row in rows} == {'GSTS', 'GST*', 'G*TS', 'G*T*'}
    pooled = [row for row in rows if row['setup'] == 'G*T*']
    assert len(pooled) == 1
    # the pooled scope covers every gesture instance once
    assert int(pooled[0]['total']) == sum(int(row['total']) for row in rows if row['setup'] == 'GST*')


def test_kld_writes_matrix_and_sidecar(synth_dir, tmp_path):
    out = tmp_path / 'kld.csv'
    assert main(['kld', '--data', str(synth_dir), '--bins', '20', '--out', str(out)]) == 0
    assert out.read_text().strip()
    sidecar = json.loads((tmp_path / 'kld.csv.json').read_text())
    assert sidecar['command'] == 'kld'
    assert sidecar['config']['bins'] == 20


def test_windows_export_respects_holdout(synth_dir, tmp_path):
    out = tmp_path / 'windows.csv'
    assert main(['windows', '--data', str(synth_dir), '--holdout', '5', '--gestures', 'G2', '--out', str(out)]) == 0
    with open(out, encoding='utf-8') as file:
        rows = list(csv.DictReader(file))
    assert rows
    assert {row['gesture'] for row in rows} == {'G2'}
    assert all(row['trial'].endswith('005') for row in rows)
    stats = json.loads((tmp_path / 'windows.csv.json').read_text())['config']['stats']
    assert not any(trial.endswith('005') for trial in stats['provenance'])


def test_evaluate_with_missing_checkpoint_fails_at_runtime(synth_dir, tmp_path):
    assert main(['evaluate', '--data', str(synth_dir), '--checkpoint', str(tmp_path / 'none.egd')]) == 2


def test_missing_data_directory_fails_at_runtime(tmp_path):
    assert main(['stats', '--data', str(tmp_path / 'nope'), '--out', str(tmp_path / 'stats.csv')]) == 2


def test_missing_labels_file_fails_at_runtime(synth_dir, tmp_path):
    argv = ['stats', '--data', str(synth_dir), '--labels', str(tmp_path / 'none.csv'), '--out', str(tmp_path / 'stats.csv')]
    assert main(argv) == 2


def test_parser_lists_every_command():
    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices
    assert set(commands) == {
        'synth', 'train', 'evaluate', 'loso', 'compare', 'kld', 'bench', 'monitor', 'gradcheck', 'stats',
        'windows', 'calibrate',
    }


@pytest.mark.slow
def test_train_evaluate_and_loso(synth_dir, tmp_path):
    config = json.dumps({'conv_filters': [4, 4], 'head_widths': [8], 'epochs': 1, 'batch_size': 16})
    models = tmp_path / 'models'
    assert main(['train', '--data', str(synth_dir), '--setup', 'gtt', '--model', 'cnn', '--holdout', '5',
                 '--all', '--config', config, '--out', str(models)]) == 0
    checkpoints = sorted(models.glob('*.egd'))
    assert [path.name for path in checkpoints] == ['gtt-all-all.egd']
    assert (models / 'gtt-all-all.egd.json').is_file()

    report = tmp_path / 'evaluate.csv'
    assert main(['evaluate', '--data', str(synth_dir), '--holdout', '5', '--checkpoint', str(models),
                 '--out', str(report)]) == 0
    with open(report, encoding='utf-8') as file:
        kinds = {row['kind'] for row in csv.DictReader(file)}
    assert 'micro_f1' in kinds

    loso = tmp_path / 'loso.csv'
    assert main(['loso', '--data', str(synth_dir), '--setup', 'gtt', '--model', 'cnn', '--config', config,
                 '--out', str(loso)]) == 0
    with open(loso, encoding='utf-8') as file:
        rows = list(csv.DictReader(file))
    assert [row['kind'] for row in rows].count('fold') == 5
    assert rows[-1]['kind'] == 'micro_f1'
