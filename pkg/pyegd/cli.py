"""
The ``pyegd`` command line.

Every subcommand validates its flags before any work starts: a usage or
validation problem exits with 1, a failure during the work with 2.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

from rich.table import Table

from .bench import latency_bench
from .checkpoint import Checkpoint, CheckpointMetadata, load_checkpoint, save_checkpoint
from .config import VERSION, resolve_seed
from .dataset import DatasetManifest, Provenance, assemble_dataset
from .errors import ConfigError, DatasetError, EGDException
from .experiment import TuningGrid, calibrate_separability, predict_instances, run_loso
from .gestures import EXPERIMENT_GESTURES, Gesture, Task
from .gradcheck import run_gradient_suite
from .http import HTTPClient
from .kld import KLD_BINS, kld_matrix
from .logs import console, setup_logging
from .metrics import Confusion, compute_metrics
from .monitor import DetectorRouter, MonitorSummary, monitor_trial
from .networks import Architecture, ModelConfig
from .preprocess import FeatureWindow, WindowConfig, export_windows_csv, fit_trial_stats, slide_gesture_windows
from .setups import Scope, TrainingSetup, assign_setup_datasets, enumerate_scopes
from .synthetic import SyntheticConfig, generate_synthetic
from .training import min_normal_windows, train_detector

__all__ = ('main', 'build_parser')

log = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = '.egd'


class UsageError(Exception):
    def __init__(self, usage: str, message: str):
        self.usage: str = usage
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(self.format_usage(), message)


class Command(NamedTuple):
    validate: Callable[[argparse.Namespace], Dict[str, Any]]
    run: Callable[..., int]


def _load_json(value: Optional[str]) -> Dict[str, Any]:
    if not value:
        return {}
    text = value if value.lstrip().startswith('{') else None
    if text is None:
        try:
            text = Path(value).read_text(encoding='utf-8')
        except OSError as exc:
            raise ConfigError(f'cannot read config {value}: {exc}')
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f'config {value} is not valid JSON: {exc}')
    if not isinstance(data, dict):
        raise ConfigError('the config must be a JSON object')
    return data


def _parse_gestures(tokens: Optional[Sequence[str]]) -> Sequence[Gesture]:
    if not tokens:
        return EXPERIMENT_GESTURES
    try:
        gestures = [Gesture.parse(token) for token in tokens]
    except ValueError as exc:
        raise ConfigError(str(exc))
    unsupported = [gesture.value for gesture in gestures if not gesture.supported]
    if unsupported:
        raise ConfigError(f'unsupported gestures: {", ".join(unsupported)}')
    return tuple(gestures)


def _model_settings(args: argparse.Namespace, seed: int, architecture: Optional[str] = None) -> Dict[str, Any]:
    overrides = _load_json(args.config)
    window = WindowConfig.from_dict(overrides.pop('window', {}))
    overrides['architecture'] = architecture or getattr(args, 'model', None) or overrides.get('architecture', 'cnn')
    overrides['seed'] = seed
    config = ModelConfig.from_dict(overrides)
    log.info('seed %d, config %s, window %s', seed, json.dumps(config.to_dict(), sort_keys=True),
             json.dumps(window.to_dict(), sort_keys=True))
    return {'config': config, 'window': window}


def _load_manifest(args: argparse.Namespace) -> DatasetManifest:
    data = Path(args.data)
    labels = Path(args.labels) if args.labels else data / 'labels.csv'
    if not data.is_dir():
        raise DatasetError(f'no dataset directory at {data}')
    if not labels.is_file():
        raise DatasetError(f'no error labels at {labels}')
    provenance, seed = Provenance.real, None
    marker = data / 'synthetic.json'
    if marker.is_file():
        provenance, seed = Provenance.synthetic, json.loads(marker.read_text(encoding='utf-8')).get('seed')
    return assemble_dataset(data, data, labels, provenance=provenance, seed=seed)


def _split_holdout(manifest: DatasetManifest, holdout: Optional[int]):
    if holdout is None:
        return list(manifest), list(manifest)
    train = [trial for trial in manifest if trial.repetition_index != holdout]
    test = [trial for trial in manifest if trial.repetition_index == holdout]
    return train, test


def _windows(trials, stats, window: WindowConfig, gestures: Sequence[Gesture]) -> List[FeatureWindow]:
    windows: List[FeatureWindow] = []
    for trial in trials:
        windows.extend(slide_gesture_windows(trial, stats, window, gestures=gestures))
    return windows


def _write_sidecar(path: Path, command: str, seed: Optional[int], config: Dict[str, Any]) -> None:
    """Writes ``<artifact>.json`` next to an artifact; no timestamps, so identical runs match."""
    sidecar = path.with_name(path.name + '.json')
    sidecar.write_text(
        json.dumps({'command': command, 'seed': seed, 'config': config, 'tool_version': VERSION},
                   indent=2, sort_keys=True) + '\n',
        encoding='utf-8',
    )


def _load_checkpoints(paths: Sequence[str]) -> List[Checkpoint]:
    files: List[Path] = []
    for value in paths:
        path = Path(value)
        if not path.exists():
            raise ConfigError(f'no checkpoint at {path}')
        files.extend(sorted(path.glob(f'*{CHECKPOINT_SUFFIX}')) if path.is_dir() else [path])
    if not files:
        raise ConfigError(f'no checkpoints found in {", ".join(paths)}')
    return [load_checkpoint(file) for file in files]


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f'--{name.replace("_", "-")}' for name in names if getattr(args, name, None) in (None, [])]
    if missing:
        raise ConfigError(f'{args.command} needs {", ".join(missing)}')


# synth


def _validate_synth(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'out')
    seed = resolve_seed(args.seed)
    overrides = _load_json(args.config)
    if args.separability is not None:
        overrides['separability'] = args.separability
    base = SyntheticConfig.for_trials(args.trials).to_dict()
    base.update(overrides)
    cfg = SyntheticConfig.from_dict(base)
    log.info('seed %d, synthetic config %s', seed, json.dumps(cfg.to_dict(), sort_keys=True))
    return {'cfg': cfg, 'seed': seed}


def _run_synth(args: argparse.Namespace, *, cfg: SyntheticConfig, seed: int) -> int:
    manifest = generate_synthetic(cfg, seed, args.out)
    console.print(f'wrote {len(manifest)} trials to {args.out}')
    return 0


# train


def _validate_train(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'out')
    setup = TrainingSetup.parse(args.setup)
    task = Task.parse(args.task) if args.task else None
    gesture = Gesture.parse(args.gesture) if args.gesture else None
    if not args.all:
        if setup.binds_task and task is None:
            raise ConfigError(f'{setup.label} models are per task; pass --task or --all')
        if setup.binds_gesture and gesture is None:
            raise ConfigError(f'{setup.label} models are per gesture; pass --gesture or --all')
    if task is not None and not setup.binds_task:
        raise ConfigError(f'{setup.label} pools tasks; drop --task')
    if gesture is not None and not setup.binds_gesture:
        raise ConfigError(f'{setup.label} pools gestures; drop --gesture')
    seed = resolve_seed(args.seed)
    settings = _model_settings(args, seed)
    settings.update(setup=setup, scope=None if args.all else Scope(setup, task, gesture), seed=seed,
                    gestures=_parse_gestures(args.gestures))
    return settings


def _run_train(
        args: argparse.Namespace,
        *,
        config: ModelConfig,
        window: WindowConfig,
        setup: TrainingSetup,
        scope: Optional[Scope],
        seed: int,
        gestures: Sequence[Gesture]
) -> int:
    manifest = _load_manifest(args)
    train, _ = _split_holdout(manifest, args.holdout)
    stats = fit_trial_stats(train, window)
    datasets = assign_setup_datasets(
        _windows(train, stats, window, gestures), setup,
        gestures=gestures, min_normal=min_normal_windows(config.architecture)
    )
    if scope is not None:
        datasets = [dataset for dataset in datasets if dataset.scope == scope]
        if not datasets:
            raise EGDException(f'no trainable data for scope {scope.name}')

    out = Path(args.out)
    if scope is None:
        out.mkdir(parents=True, exist_ok=True)

    for dataset in datasets:
        detector = train_detector(config, dataset.train)
        metadata = CheckpointMetadata(
            stats=stats,
            setup=setup.value,
            task=dataset.scope.task.value if dataset.scope.task else None,
            gesture=dataset.scope.gesture.value if dataset.scope.gesture else None,
            seed=seed,
            window=window,
        )
        if scope is None:
            task = dataset.scope.task.short if dataset.scope.task else 'all'
            gesture = dataset.scope.gesture.value if dataset.scope.gesture else 'all'
            path = out / f'{setup.value}-{task}-{gesture}{CHECKPOINT_SUFFIX}'
        else:
            path = out
        save_checkpoint(detector.network, metadata, path, references=detector.references)
        _write_sidecar(path, 'train', seed, {'model': config.to_dict(), 'window': window.to_dict(),
                                             'setup': setup.value, 'scope': dataset.scope.name,
                                             'holdout': args.holdout})
    console.print(f'trained {len(datasets)} {setup.label} {config.architecture.value} model(s)')
    return 0


# evaluate


def _validate_evaluate(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'checkpoint')
    return {'gestures': _parse_gestures(args.gestures)}


def _run_evaluate(args: argparse.Namespace, *, gestures: Sequence[Gesture]) -> int:
    router = DetectorRouter.from_checkpoints(_load_checkpoints(args.checkpoint))
    manifest = _load_manifest(args)
    _, test = _split_holdout(manifest, args.holdout)
    if args.holdout is not None:
        router.stats.assert_excludes(trial.id for trial in test)

    by_scope: Dict[Scope, List[FeatureWindow]] = {}
    unrouted = 0
    for window in _windows(test, router.stats, router.window, gestures):
        scope = Scope(router.setup, window.task if router.setup.binds_task else None,
                      window.gesture if router.setup.binds_gesture else None)
        if scope not in router.detectors:
            unrouted += 1
            continue
        by_scope.setdefault(scope, []).append(window)
    if unrouted:
        log.warning('%d windows have no matching checkpoint, skipped', unrouted)

    confusions: Dict[Any, Confusion] = {}
    window_confusions: Dict[Any, Confusion] = {}
    for scope, windows in by_scope.items():
        predictions, scope_windows = predict_instances(router.detectors[scope], windows)
        for prediction in predictions:
            key = (prediction.task, prediction.gesture)
            confusions.setdefault(key, Confusion()).add(prediction.predicted, prediction.label)
        for key, confusion in scope_windows.items():
            window_confusions[key] = window_confusions.get(key, Confusion()) + confusion

    report = compute_metrics(confusions, window_confusions=window_confusions, label=f'{router.setup.label} evaluate')
    console.print(report.table())
    if args.out:
        report.to_csv(args.out)
        _write_sidecar(Path(args.out), 'evaluate', None,
                       {'checkpoints': list(args.checkpoint), 'holdout': args.holdout})
    return 0


# loso / compare


def _validate_loso(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'out')
    setup = TrainingSetup.parse(args.setup)
    seed = resolve_seed(args.seed)
    settings = _model_settings(args, seed)
    if args.jobs < 1:
        raise ConfigError(f'--jobs must be positive, got {args.jobs}')
    settings.update(setup=setup, seed=seed, gestures=_parse_gestures(args.gestures))
    return settings


def _run_loso(
        args: argparse.Namespace,
        *,
        config: ModelConfig,
        window: WindowConfig,
        setup: TrainingSetup,
        seed: int,
        gestures: Sequence[Gesture]
) -> int:
    manifest = _load_manifest(args)
    grid = TuningGrid() if args.tune else None
    report = run_loso(manifest, setup, config.architecture, config, grid=grid, gestures=gestures, window=window,
                      jobs=args.jobs)
    console.print(report.table())
    report.to_csv(args.out)
    _write_sidecar(Path(args.out), 'loso', seed, {'model': config.to_dict(), 'window': window.to_dict(),
                                                  'setup': setup.value, 'tune': args.tune,
                                                  'gestures': [g.value for g in gestures]})
    return 0


COMPARE_HEADER = (
    'setup', 'architecture', 'micro_f1', 'window_micro_f1', 'mean_f1', 'std_f1', 'tp', 'fp', 'fn', 'tn'
)


def _validate_compare(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'out')
    pairs = []
    for token in args.pairs or [f'gst:{architecture.value}' for architecture in Architecture]:
        setup, _, architecture = token.partition(':')
        pairs.append((TrainingSetup.parse(setup), Architecture.parse(architecture)))
    seed = resolve_seed(args.seed)
    settings = _model_settings(args, seed, architecture=pairs[0][1].value)
    settings.update(pairs=pairs, seed=seed, gestures=_parse_gestures(args.gestures))
    return settings


def _run_compare(
        args: argparse.Namespace,
        *,
        config: ModelConfig,
        window: WindowConfig,
        pairs,
        seed: int,
        gestures: Sequence[Gesture]
) -> int:
    manifest = _load_manifest(args)
    table = Table(title='setup comparison')
    for column in ('Setup', 'Model', 'Micro F1', 'Fold mean'):
        table.add_column(column, justify='left' if column in ('Setup', 'Model') else 'right')

    rows = []
    for setup, architecture in pairs:
        report = run_loso(manifest, setup, architecture, config.replace(architecture=architecture.value),
                          gestures=gestures, window=window, jobs=args.jobs)
        pooled = report.pooled
        rows.append({
            'setup': setup.label,
            'architecture': architecture.value,
            'micro_f1': f'{report.micro_f1:.6f}',
            'window_micro_f1': '' if report.window_micro_f1 is None else f'{report.window_micro_f1:.6f}',
            'mean_f1': '' if report.fold_mean is None else f'{report.fold_mean:.6f}',
            'std_f1': '' if report.fold_std is None else f'{report.fold_std:.6f}',
            'tp': pooled.tp, 'fp': pooled.fp, 'fn': pooled.fn, 'tn': pooled.tn,
        })
        table.add_row(setup.label, architecture.value, rows[-1]['micro_f1'], rows[-1]['mean_f1'] or '-')

    with open(args.out, 'w', encoding='utf-8', newline='') as file:
        writer = csv.DictWriter(file, fieldnames=COMPARE_HEADER, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
    console.print(table)
    _write_sidecar(Path(args.out), 'compare', seed, {
        'model': config.to_dict(), 'window': window.to_dict(),
        'pairs': [f'{setup.value}:{architecture.value}' for setup, architecture in pairs],
    })
    return 0


# kld


def _validate_kld(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'out')
    if args.bins < 1:
        raise ConfigError(f'--bins must be positive, got {args.bins}')
    return {'gestures': _parse_gestures(args.gestures)}


def _run_kld(args: argparse.Namespace, *, gestures: Sequence[Gesture]) -> int:
    matrix = kld_matrix(_load_manifest(args), args.bins, gestures=gestures)
    console.print(matrix.table())
    matrix.to_csv(args.out)
    _write_sidecar(Path(args.out), 'kld', None, {'bins': args.bins, 'gestures': [g.value for g in gestures]})
    return 0


# bench


def _validate_bench(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'checkpoint', 'out')
    if args.repetitions < 1:
        raise ConfigError(f'--repetitions must be positive, got {args.repetitions}')
    return {}


def _run_bench(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args)
    _, test = _split_holdout(manifest, args.holdout)
    rows = []
    for checkpoint in _load_checkpoints(args.checkpoint):
        meta = checkpoint.metadata
        gestures = [Gesture.parse(meta.gesture)] if meta.gesture else list(EXPERIMENT_GESTURES)
        windows = [
            window for window in _windows(test, meta.stats, meta.window, gestures)
            if meta.task is None or window.task is Task.parse(meta.task)
        ]
        if args.limit:
            windows = windows[:args.limit]
        report = latency_bench(checkpoint.detector(), windows, args.repetitions)
        row = report.row()
        row['scope'] = f'{meta.task or "*"}/{meta.gesture or "*"}'
        rows.append(row)

    with open(args.out, 'w', encoding='utf-8', newline='') as file:
        writer = csv.DictWriter(file, fieldnames=['scope'] + [key for key in rows[0] if key != 'scope'],
                                lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        console.print(f'{row["scope"]} {row["architecture"]}: mean {row["mean_ms"] or "-"} ms, p95 {row["p95_ms"] or "-"} ms')
    return 0


# monitor


def _validate_monitor(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'checkpoint')
    if args.rate < 0:
        raise ConfigError(f'--rate must be non-negative, got {args.rate}')
    return {'gestures': _parse_gestures(args.gestures) if args.gestures else None}


async def _monitor(args: argparse.Namespace, router: DetectorRouter, trials, output, gestures) -> List[MonitorSummary]:
    summaries = []
    sink = HTTPClient(args.sink) if args.sink else None
    if sink is not None:
        await sink.open()
    try:
        for trial in trials:
            summaries.append(await monitor_trial(trial, router, rate=args.rate, gestures=gestures,
                                                 output=output, sink=sink))
    finally:
        if sink is not None:
            await sink.close()
    return summaries


def _run_monitor(args: argparse.Namespace, *, gestures: Optional[Sequence[Gesture]]) -> int:
    router = DetectorRouter.from_checkpoints(_load_checkpoints(args.checkpoint))
    manifest = _load_manifest(args)
    _, trials = _split_holdout(manifest, args.holdout)
    if args.trial:
        wanted = set(args.trial)
        trials = [trial for trial in manifest if trial.id in wanted]
        missing = wanted - {trial.id for trial in trials}
        if missing:
            raise EGDException(f'unknown trials: {", ".join(sorted(missing))}')

    output = open(args.out, 'w', encoding='utf-8') if args.out else sys.stdout
    try:
        summaries = asyncio.run(_monitor(args, router, trials, output, gestures))
    finally:
        if args.out:
            output.close()

    events = [event for summary in summaries for event in summary.events]
    skips = [skip for summary in summaries for skip in summary.skips]
    summary = MonitorSummary(events, budget_ms=summaries[0].budget_ms if summaries else 0.0, skips=skips)
    console.print(summary.table())
    if args.summary:
        summary.to_csv(args.summary)
    if not summary.real_time:
        log.warning('mean detection latency %.1f ms exceeds the %.1f ms stride period', summary.mean(), summary.budget_ms)
    return 0


# gradcheck


def _validate_gradcheck(args: argparse.Namespace) -> Dict[str, Any]:
    if args.instances < 1:
        raise ConfigError(f'--instances must be positive, got {args.instances}')
    return {'seed': resolve_seed(args.seed)}


def _run_gradcheck(args: argparse.Namespace, *, seed: int) -> int:
    reports = run_gradient_suite(seed, instances=args.instances)
    table = Table(title=f'gradient check, seed {seed}')
    for column in ('Check', 'Max rel. error', 'Checked', 'Skipped', 'Result'):
        table.add_column(column, justify='left' if column == 'Check' else 'right')
    for report in reports:
        table.add_row(report.name, f'{report.max_relative_error:.2e}', str(report.checked), str(report.skipped),
                      'pass' if report.passed else '[red]FAIL[/red]')
    console.print(table)

    if args.out:
        with open(args.out, 'w', encoding='utf-8', newline='') as file:
            writer = csv.writer(file, lineterminator='\n')
            writer.writerow(['check', 'max_relative_error', 'worst', 'checked', 'skipped', 'passed'])
            for report in reports:
                writer.writerow([report.name, f'{report.max_relative_error:.6e}', report.worst, report.checked,
                                 report.skipped, int(report.passed)])

    failed = [report.name for report in reports if not report.passed]
    if failed:
        log.error('gradient check failed for %s', ', '.join(sorted(set(failed))))
        return 2
    return 0


# stats


STATS_HEADER = ('setup', 'scope', 'total', 'erroneous', 'error_pct')


def _validate_stats(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data')
    return {'gestures': _parse_gestures(args.gestures)}


def _run_stats(args: argparse.Namespace, *, gestures: Sequence[Gesture]) -> int:
    manifest = _load_manifest(args)
    counts = manifest.counts(gestures)

    rows = []
    for setup in TrainingSetup:
        for scope in enumerate_scopes(setup, manifest.tasks(), gestures):
            total = sum(t for (task, gesture), (t, _) in counts.items() if scope.matches(task, gesture))
            erroneous = sum(e for (task, gesture), (_, e) in counts.items() if scope.matches(task, gesture))
            if total:
                rows.append({'setup': setup.label, 'scope': scope.name, 'total': total, 'erroneous': erroneous,
                             'error_pct': f'{100.0 * erroneous / total:.2f}'})

    table = Table(title=f'{len(manifest)} trials ({manifest.provenance.value})')
    for column in ('Setup', 'Scope', 'Total', 'Erroneous', 'Error %'):
        table.add_column(column, justify='left' if column in ('Setup', 'Scope') else 'right')
    for row in rows:
        table.add_row(row['setup'], row['scope'], str(row['total']), str(row['erroneous']), row['error_pct'])
    console.print(table)

    if args.out:
        with open(args.out, 'w', encoding='utf-8', newline='') as file:
            writer = csv.DictWriter(file, fieldnames=STATS_HEADER, lineterminator='\n')
            writer.writeheader()
            writer.writerows(rows)
    return 0


# windows


def _validate_windows(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'data', 'out')
    window = WindowConfig.from_dict(_load_json(args.config).get('window', {}))
    return {'window': window, 'gestures': _parse_gestures(args.gestures)}


def _run_windows(args: argparse.Namespace, *, window: WindowConfig, gestures: Sequence[Gesture]) -> int:
    manifest = _load_manifest(args)
    train, test = _split_holdout(manifest, args.holdout)
    stats = fit_trial_stats(train, window)
    if args.trial:
        test = [trial for trial in test if trial.id in set(args.trial)]
    windows = _windows(test, stats, window, gestures)
    export_windows_csv(windows, args.out)
    _write_sidecar(Path(args.out), 'windows', None, {'window': window.to_dict(), 'holdout': args.holdout,
                                                     'stats': stats.to_dict()})
    console.print(f'wrote {len(windows)} windows to {args.out}')
    return 0


# calibrate


def _validate_calibrate(args: argparse.Namespace) -> Dict[str, Any]:
    _require(args, 'out')
    if not 0.0 <= args.low < args.high:
        raise ConfigError(f'invalid separability range [{args.low}, {args.high}]')
    seed = resolve_seed(args.seed)
    base = SyntheticConfig.for_trials(args.trials).to_dict()
    base.update(_load_json(args.config))
    return {'cfg': SyntheticConfig.from_dict(base), 'seed': seed}


def _run_calibrate(args: argparse.Namespace, *, cfg: SyntheticConfig, seed: int) -> int:
    separability, f1 = calibrate_separability(cfg, seed, low=args.low, high=args.high, iterations=args.iterations)
    result = {'separability': separability, 'baseline_f1': f1, 'seed': seed, 'config': cfg.to_dict(),
              'tool_version': VERSION}
    Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    console.print(f'separability {separability:.4f} gives nearest-centroid micro F1 {f1:.4f}')
    return 0


COMMANDS: Dict[str, Command] = {
    'synth': Command(_validate_synth, _run_synth),
    'train': Command(_validate_train, _run_train),
    'evaluate': Command(_validate_evaluate, _run_evaluate),
    'loso': Command(_validate_loso, _run_loso),
    'compare': Command(_validate_compare, _run_compare),
    'kld': Command(_validate_kld, _run_kld),
    'bench': Command(_validate_bench, _run_bench),
    'monitor': Command(_validate_monitor, _run_monitor),
    'gradcheck': Command(_validate_gradcheck, _run_gradcheck),
    'stats': Command(_validate_stats, _run_stats),
    'windows': Command(_validate_windows, _run_windows),
    'calibrate': Command(_validate_calibrate, _run_calibrate),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--seed', type=int, help='seed; falls back to $EGD_SEED, then 0')
    common.add_argument('--out', help='output file or directory')
    common.add_argument('--config', help='JSON overrides, inline or a path')
    common.add_argument('--verbose', '-v', action='count', default=0)

    data = _Parser(add_help=False)
    data.add_argument('--data', help='dataset root')
    data.add_argument('--labels', help='error labels CSV; <data>/labels.csv by default')
    data.add_argument('--holdout', type=int, help='repetition held out of training')
    data.add_argument('--gestures', nargs='+', help='gestures to model')

    model = _Parser(add_help=False)
    model.add_argument('--setup', default='gst', help='gsts, gst, gts or gtt')
    model.add_argument('--model', default='siamese-cnn', choices=[a.value for a in Architecture])
    model.add_argument('--jobs', type=int, default=1, help='folds run in parallel')

    checkpoints = _Parser(add_help=False)
    checkpoints.add_argument('--checkpoint', nargs='+', help='checkpoint files or directories')

    parser = _Parser(prog='pyegd', description='Executional error detection on surgical kinematics.')
    parser.add_argument('--version', action='version', version=f'pyegd {VERSION}')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    p = sub.add_parser('synth', parents=[common], help='generate a synthetic dataset')
    p.add_argument('--trials', type=int, default=40, help='trials per task')
    p.add_argument('--separability', type=float)

    p = sub.add_parser('train', parents=[common, data, model], help='train a detector checkpoint')
    p.add_argument('--task')
    p.add_argument('--gesture')
    p.add_argument('--all', action='store_true', help='train every scope of the setup into --out')

    sub.add_parser('evaluate', parents=[common, data, checkpoints], help='score checkpoints on a dataset')

    p = sub.add_parser('loso', parents=[common, data, model], help='leave-one-supertrial-out evaluation')
    p.add_argument('--tune', action='store_true', help='nested hyperparameter tuning')

    p = sub.add_parser('compare', parents=[common, data, model], help='LOSO over setup:model pairs')
    p.add_argument('--pairs', nargs='+', help='e.g. gst:siamese-lstm gtt:lstm')

    p = sub.add_parser('kld', parents=[common, data], help='KL divergence between gesture classes')
    p.add_argument('--bins', type=int, default=KLD_BINS)

    p = sub.add_parser('bench', parents=[common, data, checkpoints], help='per-window inference latency')
    p.add_argument('--repetitions', type=int, default=1)
    p.add_argument('--limit', type=int, help='windows to time per checkpoint')

    p = sub.add_parser('monitor', parents=[common, data, checkpoints], help='replay trials through detection')
    p.add_argument('--trial', nargs='+', help='trial IDs; the holdout trials by default')
    p.add_argument('--rate', type=float, default=1.0, help='replay speed, 0 for no pacing')
    p.add_argument('--summary', help='summary CSV')
    p.add_argument('--sink', help='collector URL receiving events')

    p = sub.add_parser('gradcheck', parents=[common], help='finite-difference gradient checks')
    p.add_argument('--instances', type=int, default=20)

    sub.add_parser('stats', parents=[common, data], help='instance and error counts')

    p = sub.add_parser('windows', parents=[common, data], help='export normalized windows as CSV')
    p.add_argument('--trial', nargs='+')

    p = sub.add_parser('calibrate', parents=[common], help='calibrate synthetic separability')
    p.add_argument('--trials', type=int, default=40)
    p.add_argument('--low', type=float, default=0.0)
    p.add_argument('--high', type=float, default=4.0)
    p.add_argument('--iterations', type=int, default=10)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.error('a command is required')
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f'pyegd: error: {exc}\n')
        return 1

    setup_logging(logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING)
    command = COMMANDS[args.command]

    try:
        resolved = command.validate(args)
    except (EGDException, ValueError) as exc:
        log.error('%s', exc)
        sys.stderr.write(parser.format_usage())
        return 1

    try:
        return command.run(args, **resolved)
    except EGDException as exc:
        log.error('%s failed: %s', args.command, exc)
        return 2
