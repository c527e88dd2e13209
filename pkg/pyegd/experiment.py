"""
Leave-One-SuperTrial-Out experiments, nested tuning and the nearest-centroid baseline.
"""

from __future__ import annotations

import logging
import tempfile
import time
from collections import OrderedDict, defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .config import TUNING_BATCH_SIZES, TUNING_EPOCHS, TUNING_LEARNING_RATES
from .dataset import DatasetManifest, Fold, TrialRecord, split_loso_folds
from .errors import ConfigError, FoldError, TrainingDivergedError
from .gestures import EXPERIMENT_GESTURES, Gesture
from .metrics import Confusion, FoldResult, InstancePrediction, MetricKey, MetricsReport, ScopeOutcome
from .networks import Architecture, ModelConfig
from .preprocess import FeatureWindow, WindowConfig, fit_trial_stats, slide_gesture_windows
from .setups import Scope, ScopedDataset, TrainingSetup, assign_setup_datasets
from .synthetic import SyntheticConfig, generate_synthetic
from .training import DetectionResult, majority_vote, min_normal_windows, train_detector

__all__ = (
    'DetectorFactory',
    'TuningGrid',
    'CentroidDetector',
    'train_centroid',
    'predict_instances',
    'run_loso',
    'nested_tune',
    'nearest_centroid_f1',
    'calibrate_separability',
)

log = logging.getLogger(__name__)

# (config, training windows of one scope) -> object with detect(window) -> DetectionResult
DetectorFactory = Callable[[ModelConfig, Sequence[FeatureWindow]], Any]


class TuningGrid:
    """
    The hyperparameter grid searched by :func:`nested_tune`, iterated as
    learning rate, then batch size, then epochs.
    """

    __slots__ = ('learning_rates', 'batch_sizes', 'epochs')

    def __init__(
            self,
            *,
            learning_rates: Sequence[float] = TUNING_LEARNING_RATES,
            batch_sizes: Sequence[int] = TUNING_BATCH_SIZES,
            epochs: Sequence[int] = TUNING_EPOCHS
    ):
        self.learning_rates: Tuple[float, ...] = tuple(learning_rates)
        self.batch_sizes: Tuple[int, ...] = tuple(batch_sizes)
        self.epochs: Tuple[int, ...] = tuple(epochs)

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        for learning_rate in self.learning_rates:
            for batch_size in self.batch_sizes:
                for epochs in self.epochs:
                    yield {'learning_rate': learning_rate, 'batch_size': batch_size, 'epochs': epochs}

    def __len__(self) -> int:
        return len(self.learning_rates) * len(self.batch_sizes) * len(self.epochs)

    def __repr__(self):
        return f'<TuningGrid candidates={len(self)}>'


class CentroidDetector:
    """Labels a window by the nearer of the normal and erroneous training centroids."""

    __slots__ = ('normal', 'erroneous')

    def __init__(self, normal: np.ndarray, erroneous: np.ndarray):
        self.normal: np.ndarray = normal
        self.erroneous: np.ndarray = erroneous

    def detect(self, window: FeatureWindow) -> DetectionResult:
        started = time.perf_counter()
        to_normal = float(np.linalg.norm(window.data - self.normal))
        to_erroneous = float(np.linalg.norm(window.data - self.erroneous))
        total = to_normal + to_erroneous
        probability = to_normal / total if total else 0.5
        return DetectionResult(
            probability=probability,
            label=int(to_erroneous < to_normal),
            elapsed_ms=(time.perf_counter() - started) * 1000.0,
        )


def train_centroid(config: ModelConfig, windows: Sequence[FeatureWindow]) -> CentroidDetector:
    normal = np.mean([window.data for window in windows if not window.label], axis=0)
    erroneous = np.mean([window.data for window in windows if window.label], axis=0)
    return CentroidDetector(normal, erroneous)


def unit_seed(seed: int, *parts: int) -> int:
    """A seed for one independent work unit, stable under any scheduling."""
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0])


def predict_instances(
        detector: Any,
        windows: Sequence[FeatureWindow]
) -> Tuple[List[InstancePrediction], Dict[MetricKey, Confusion]]:
    """
    Classifies every window and fuses the verdicts of each gesture instance by
    majority, ties counting as erroneous.

    Returns
    -------
    Tuple[List[:class:`InstancePrediction`], Dict[Tuple[:class:`Task`, :class:`Gesture`], :class:`Confusion`]]
        The instance predictions in window order and the window-level counts.
    """
    groups: Dict[Tuple[str, int], List[Tuple[FeatureWindow, int]]] = OrderedDict()
    window_confusions: Dict[MetricKey, Confusion] = defaultdict(Confusion)

    for window in windows:
        verdict = detector.detect(window).label
        groups.setdefault(window.instance_key, []).append((window, verdict))
        window_confusions[(window.task, window.gesture)].add(verdict, window.label)

    predictions = []
    for (trial_id, gesture_index), members in groups.items():
        first = members[0][0]
        verdicts = [verdict for _, verdict in members]
        predictions.append(InstancePrediction(
            trial_id=trial_id,
            gesture_index=gesture_index,
            task=first.task,
            gesture=first.gesture,
            label=first.label,
            predicted=majority_vote(verdicts),
            windows=len(verdicts),
            erroneous_windows=sum(verdicts),
        ))
    return predictions, dict(window_confusions)


def _fold_datasets(
        train: Sequence[TrialRecord],
        test: Sequence[TrialRecord],
        setup: TrainingSetup,
        gestures: Sequence[Gesture],
        window: WindowConfig,
        min_normal: int = 1
) -> List[ScopedDataset]:
    stats = fit_trial_stats(train, window)
    stats.assert_excludes(trial.id for trial in test)

    train_windows = [w for trial in train for w in slide_gesture_windows(trial, stats, window, gestures=gestures)]
    test_windows = [w for trial in test for w in slide_gesture_windows(trial, stats, window, gestures=gestures)]
    return assign_setup_datasets(
        train_windows, setup, test_windows=test_windows, gestures=gestures, min_normal=min_normal
    )


class _FoldTask(NamedTuple):
    fold: Fold
    setup: TrainingSetup
    config: ModelConfig
    gestures: Tuple[Gesture, ...]
    window: WindowConfig
    grid: Optional[TuningGrid]
    factory: DetectorFactory


def _run_fold(task: _FoldTask) -> FoldResult:
    started = time.perf_counter()
    fold = task.fold
    datasets = _fold_datasets(
        fold.train, fold.test, task.setup, task.gestures, task.window, min_normal_windows(task.config.architecture)
    )

    scopes: List[ScopeOutcome] = []
    predictions: List[InstancePrediction] = []
    window_confusions: Dict[MetricKey, Confusion] = defaultdict(Confusion)

    for k, dataset in enumerate(datasets):
        if not dataset.test:
            log.warning('fold %d has no test instances in scope %s, skipped', fold.index, dataset.scope.name)
            continue

        config = task.config
        if task.grid is not None:
            config = nested_tune(
                fold.train, task.setup, config, task.grid,
                scope=dataset.scope, gestures=task.gestures, window=task.window, detector_factory=task.factory,
            )
        config = config.replace(seed=unit_seed(config.seed, fold.index, k))

        detector = task.factory(config, dataset.train)
        scope_predictions, scope_windows = predict_instances(detector, dataset.test)
        predictions.extend(scope_predictions)
        for key, confusion in scope_windows.items():
            window_confusions[key] = window_confusions[key] + confusion

        scopes.append(ScopeOutcome(
            scope=dataset.scope.name,
            confusion=Confusion.from_labels(
                (p.predicted for p in scope_predictions), (p.label for p in scope_predictions)
            ),
            window_confusion=sum(scope_windows.values(), Confusion()),
            error_pct=dataset.error_percentage(),
            train_windows=len(dataset.train),
        ))
        log.info(
            'fold %d scope %s: %d train windows, %d test instances, F1 %.3f',
            fold.index, dataset.scope.name, len(dataset.train), len(scope_predictions), scopes[-1].confusion.f1
        )

    return FoldResult(
        index=fold.index,
        scopes=scopes,
        predictions=predictions,
        window_confusions=dict(window_confusions),
        elapsed_s=time.perf_counter() - started,
    )


def _resolve_config(architecture: Union[Architecture, str], config: Optional[ModelConfig]) -> ModelConfig:
    if not isinstance(architecture, Architecture):
        architecture = Architecture.parse(architecture)
    if config is None:
        return ModelConfig(architecture)
    if config.architecture is not architecture:
        return config.replace(architecture=architecture.value)
    return config


def run_loso(
        manifest: DatasetManifest,
        setup: TrainingSetup,
        architecture: Union[Architecture, str],
        config: Optional[ModelConfig] = None,
        *,
        grid: Optional[TuningGrid] = None,
        gestures: Sequence[Gesture] = EXPERIMENT_GESTURES,
        window: Optional[WindowConfig] = None,
        jobs: int = 1,
        detector_factory: Optional[DetectorFactory] = None
) -> MetricsReport:
    """
    Runs five-fold Leave-One-SuperTrial-Out evaluation of one setup and architecture.

    Per fold: fit channel statistics on the training trials, window both sides,
    train one model per scope, classify the test windows and fuse them per
    gesture instance by majority (ties count as erroneous).

    Parameters
    ----------
    manifest : :class:`DatasetManifest`
    setup : :class:`TrainingSetup`
    architecture : Union[:class:`Architecture`, :class:`str`]
    config : Optional[:class:`ModelConfig`]
        Hyperparameters; the defaults when ``None``.
    grid : Optional[:class:`TuningGrid`]
        When given, every fold and scope tunes its hyperparameters with :func:`nested_tune`.
    gestures : Sequence[:class:`Gesture`]
        The gestures to model.
    window : Optional[:class:`WindowConfig`]
    jobs : :class:`int`
        Folds evaluated in parallel processes. Results do not depend on it.
    detector_factory : Optional[Callable]
        Builds a detector from a config and training windows; :func:`train_detector` by default.
        Must be picklable when ``jobs > 1``.

    Raises
    ------
    :class:`FoldError`
        The manifest does not split into five folds.
    :class:`LeakageError`
        Channel statistics were fitted on a test trial.

    Returns
    -------
    :class:`MetricsReport`
    """
    config = _resolve_config(architecture, config)
    window = window or WindowConfig()
    factory = detector_factory or train_detector
    folds = split_loso_folds(manifest)

    log.info('running %s %s LOSO with %r', setup.label, config.architecture.value, config)
    tasks = [_FoldTask(fold, setup, config, tuple(gestures), window, grid, factory) for fold in folds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(_run_fold, tasks))
    else:
        results = [_run_fold(task) for task in tasks]

    confusions: Dict[MetricKey, Confusion] = defaultdict(Confusion)
    window_confusions: Dict[MetricKey, Confusion] = defaultdict(Confusion)
    for result in results:
        for key, confusion in result.confusions().items():
            confusions[key] = confusions[key] + confusion
        for key, confusion in result.window_confusions.items():
            window_confusions[key] = window_confusions[key] + confusion

    error_percentages = {
        key: 100.0 * erroneous / total
        for key, (total, erroneous) in manifest.counts(gestures).items() if total
    }
    report = MetricsReport(
        dict(confusions),
        window_confusions=dict(window_confusions),
        error_percentages=error_percentages,
        folds=results,
        label=f'{setup.label} {config.architecture.value}',
    )
    log.info('%r', report)
    return report


def nested_tune(
        trials: Sequence[TrialRecord],
        setup: TrainingSetup,
        base: ModelConfig,
        grid: TuningGrid,
        *,
        scope: Optional[Scope] = None,
        gestures: Sequence[Gesture] = EXPERIMENT_GESTURES,
        window: Optional[WindowConfig] = None,
        detector_factory: Optional[DetectorFactory] = None
) -> ModelConfig:
    """
    Picks the grid candidate with the best inner micro F1.

    The inner folds hold out one super trial of ``trials`` at a time. Ties go
    to the earlier candidate; a candidate whose training diverges scores -1.

    Parameters
    ----------
    trials : Sequence[:class:`TrialRecord`]
        The outer training trials.
    setup : :class:`TrainingSetup`
    base : :class:`ModelConfig`
        Supplies every setting the grid does not vary.
    grid : :class:`TuningGrid`
    scope : Optional[:class:`Scope`]
        Restricts scoring to one scope.

    Raises
    ------
    :class:`ConfigError`
        The grid is empty.
    :class:`FoldError`
        Fewer than two super trials are available for inner folds.

    Returns
    -------
    :class:`ModelConfig`
    """
    candidates = list(grid)
    if not candidates:
        raise ConfigError('cannot tune over an empty grid')
    window = window or WindowConfig()
    factory = detector_factory or train_detector

    repetitions = sorted({trial.repetition_index for trial in trials})
    if len(repetitions) < 2:
        raise FoldError(f'nested tuning needs at least 2 super trials, got {len(repetitions)}')
    if len(candidates) == 1:
        return base.replace(**candidates[0])

    inner = []
    for repetition in repetitions:
        train = [trial for trial in trials if trial.repetition_index != repetition]
        test = [trial for trial in trials if trial.repetition_index == repetition]
        datasets = _fold_datasets(train, test, setup, gestures, window, min_normal_windows(base.architecture))
        if scope is not None:
            datasets = [dataset for dataset in datasets if dataset.scope == scope]
        inner.append((repetition, [dataset for dataset in datasets if dataset.test]))

    best, best_score = candidates[0], -np.inf
    for c, candidate in enumerate(candidates):
        config = base.replace(**candidate)
        pooled = Confusion()
        try:
            for repetition, datasets in inner:
                for k, dataset in enumerate(datasets):
                    detector = factory(config.replace(seed=unit_seed(config.seed, repetition, k)), dataset.train)
                    predictions, _ = predict_instances(detector, dataset.test)
                    pooled = pooled + Confusion.from_labels(
                        (p.predicted for p in predictions), (p.label for p in predictions)
                    )
            score = pooled.f1
        except TrainingDivergedError as exc:
            log.warning('candidate %s diverged at epoch %d', candidate, exc.epoch)
            score = -1.0

        log.debug('candidate %d %s inner micro F1 %.4f', c, candidate, score)
        if score > best_score:
            best, best_score = candidate, score

    log.info('nested tuning picked %s (inner micro F1 %.4f)', best, best_score)
    return base.replace(**best)


def nearest_centroid_f1(
        manifest: DatasetManifest,
        setup: TrainingSetup = TrainingSetup.gst,
        *,
        gestures: Sequence[Gesture] = EXPERIMENT_GESTURES
) -> float:
    """The LOSO micro F1 of a per-scope nearest-centroid classifier."""
    return run_loso(manifest, setup, Architecture.cnn, gestures=gestures, detector_factory=train_centroid).micro_f1


def calibrate_separability(
        cfg: SyntheticConfig,
        seed: int,
        *,
        target: Tuple[float, float] = (0.70, 0.80),
        low: float = 0.0,
        high: float = 4.0,
        iterations: int = 10,
        workdir: Optional[Union[str, Path]] = None
) -> Tuple[float, float]:
    """
    Bisects the synthetic separability until the nearest-centroid baseline F1
    lies in ``target``.

    Returns
    -------
    Tuple[:class:`float`, :class:`float`]
        The separability and the baseline F1 it reached.
    """
    if not 0.0 <= target[0] <= target[1] <= 1.0:
        raise ConfigError(f'invalid target band {target}')

    with tempfile.TemporaryDirectory(prefix='pyegd-calibrate-') as scratch:
        root = Path(workdir) if workdir is not None else Path(scratch)
        separability, f1 = (low + high) / 2.0, 0.0
        for iteration in range(iterations):
            separability = (low + high) / 2.0
            candidate = SyntheticConfig.from_dict({**cfg.to_dict(), 'separability': separability})
            manifest = generate_synthetic(candidate, seed, root / f'separability-{iteration}')
            f1 = nearest_centroid_f1(manifest)
            log.info('separability %.4f gives baseline micro F1 %.4f', separability, f1)
            if target[0] <= f1 <= target[1]:
                return separability, f1
            if f1 < target[0]:
                low = separability
            else:
                high = separability

    log.warning('no separability in [%g, %g] reached the band %s; last F1 %.4f', low, high, target, f1)
    return separability, f1
