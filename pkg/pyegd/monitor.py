from __future__ import annotations

import asyncio
import csv
import json
import logging
import time
from pathlib import Path
from typing import IO, Any, AsyncIterator, Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from rich.table import Table

from .checkpoint import Checkpoint
from .config import SAMPLE_RATE_HZ
from .dataset import TrialRecord
from .errors import ConfigError
from .gestures import Gesture, GestureInstance, Task
from .kinematics import KinematicSequence, RawKinematicSample
from .preprocess import (
    ChannelStats,
    FeatureWindow,
    WindowConfig,
    WindowSkip,
    WindowSource,
    extract_feature_channels,
    normalize,
    pad_to_window,
)
from .setups import Scope, TrainingSetup, scope_for
from .training import Detector

__all__ = (
    'StreamEvent',
    'AssembledWindow',
    'DetectionEvent',
    'MonitorSummary',
    'DetectorRouter',
    'WindowAssembler',
    'stride_period_ms',
    'replay_stream',
    'assemble_windows',
    'detect_stream',
    'monitor_trial',
)

log = logging.getLogger(__name__)


def stride_period_ms(cfg: WindowConfig) -> float:
    """Wall time between window starts at real-time pacing."""
    return 1000.0 * cfg.stride * cfg.downsample_factor / SAMPLE_RATE_HZ


class StreamEvent:
    """
    One replayed kinematic frame.

    Attributes
    ----------
    frame : :class:`int`
        1-based frame index in the trial.
    timestamp : :class:`float`
        :func:`time.perf_counter` reading when the frame was emitted.
    instance : Optional[:class:`GestureInstance`]
        The gesture the transcript assigns to the frame.
    sample : :class:`RawKinematicSample`
    """

    __slots__ = ('frame', 'timestamp', 'instance', 'sample')

    def __init__(self, *, frame: int, timestamp: float, instance: Optional[GestureInstance], sample: RawKinematicSample):
        self.frame: int = frame
        self.timestamp: float = timestamp
        self.instance: Optional[GestureInstance] = instance
        self.sample: RawKinematicSample = sample

    def __repr__(self):
        gesture = self.instance.gesture.value if self.instance else None
        return f'<StreamEvent frame={self.frame} gesture={gesture}>'


class AssembledWindow(NamedTuple):
    window: FeatureWindow
    frame: int
    completed_at: float


class DetectionEvent:
    """
    The verdict on one online window.

    Attributes
    ----------
    frame : :class:`int`
        The raw frame that completed the window.
    source : :class:`WindowSource`
    task : :class:`Task`
    gesture : :class:`Gesture`
    verdict : Optional[:class:`int`]
        ``1`` for erroneous, ``None`` when unmonitored.
    score : Optional[:class:`float`]
        Error probability or vote fraction.
    latency_ms : :class:`float`
        From the completing frame to the verdict, queueing included.
    model_ms : :class:`float`
        Inference alone.
    unmonitored : :class:`bool`
        No detector covers the window's scope.
    violation : :class:`bool`
        ``latency_ms`` exceeded the stride period.
    label : :class:`int`
        The annotated error label of the instance.
    """

    __slots__ = (
        'frame', 'source', 'task', 'gesture', 'verdict', 'score', 'latency_ms', 'model_ms', 'unmonitored',
        'violation', 'label'
    )

    def __init__(
            self,
            *,
            frame: int,
            source: WindowSource,
            task: Task,
            gesture: Gesture,
            verdict: Optional[int],
            score: Optional[float],
            latency_ms: float,
            model_ms: float = 0.0,
            unmonitored: bool = False,
            violation: bool = False,
            label: int = 0
    ):
        self.frame: int = frame
        self.source: WindowSource = source
        self.task: Task = task
        self.gesture: Gesture = gesture
        self.verdict: Optional[int] = verdict
        self.score: Optional[float] = score
        self.latency_ms: float = max(latency_ms, 0.0)
        self.model_ms: float = model_ms
        self.unmonitored: bool = unmonitored
        self.violation: bool = violation
        self.label: int = label

    def to_dict(self) -> Dict[str, Any]:
        return {
            'frame': self.frame,
            'trial': self.source.trial_id,
            'gesture_index': self.source.gesture_index,
            'offset': self.source.offset,
            'task': self.task.value,
            'gesture': self.gesture.value,
            'verdict': self.verdict,
            'score': self.score,
            'latency_ms': round(self.latency_ms, 4),
            'model_ms': round(self.model_ms, 4),
            'unmonitored': self.unmonitored,
            'violation': self.violation,
            'label': self.label,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(',', ':'))

    def __repr__(self):
        return (
            f'<DetectionEvent frame={self.frame} gesture={self.gesture.value} verdict={self.verdict} '
            f'latency_ms={self.latency_ms:.3f}>'
        )


class MonitorSummary:
    """
    Latency statistics recomputed from the emitted events.

    Unmonitored events count towards ``windows`` only.
    """

    __slots__ = ('events', 'budget_ms', 'skips')

    def __init__(self, events: Sequence[DetectionEvent], *, budget_ms: float, skips: Sequence[WindowSkip] = ()):
        self.events: List[DetectionEvent] = list(events)
        self.budget_ms: float = budget_ms
        self.skips: List[WindowSkip] = list(skips)

    def _monitored(self, field: str) -> np.ndarray:
        return np.array([getattr(event, field) for event in self.events if not event.unmonitored], dtype=np.float64)

    @property
    def windows(self) -> int:
        return len(self.events)

    @property
    def unmonitored(self) -> int:
        return sum(event.unmonitored for event in self.events)

    @property
    def violations(self) -> int:
        return sum(event.violation for event in self.events)

    def mean(self, field: str = 'latency_ms') -> Optional[float]:
        values = self._monitored(field)
        return float(values.mean()) if values.size else None

    def p95(self, field: str = 'latency_ms') -> Optional[float]:
        values = self._monitored(field)
        return float(np.percentile(values, 95)) if values.size else None

    @property
    def real_time(self) -> bool:
        mean = self.mean()
        return mean is None or mean < self.budget_ms

    def row(self) -> Dict[str, Any]:
        def fmt(value: Optional[float]) -> str:
            return '' if value is None else f'{value:.4f}'

        return {
            'windows': self.windows,
            'unmonitored': self.unmonitored,
            'skipped_instances': len(self.skips),
            'mean_latency_ms': fmt(self.mean('latency_ms')),
            'p95_latency_ms': fmt(self.p95('latency_ms')),
            'mean_model_ms': fmt(self.mean('model_ms')),
            'p95_model_ms': fmt(self.p95('model_ms')),
            'budget_ms': f'{self.budget_ms:.4f}',
            'violations': self.violations,
        }

    def to_csv(self, path: Union[str, Path]) -> None:
        row = self.row()
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.DictWriter(file, fieldnames=list(row), lineterminator='\n')
            writer.writeheader()
            writer.writerow(row)

    def table(self) -> Table:
        table = Table(title='monitor summary')
        table.add_column('metric')
        table.add_column('value', justify='right')
        for key, value in self.row().items():
            table.add_row(key, str(value))
        return table

    def __repr__(self):
        return f'<MonitorSummary windows={self.windows} mean_ms={self.mean()} violations={self.violations}>'


class DetectorRouter:
    """
    Selects the detector for a window by its task and gesture.

    Attributes
    ----------
    setup : :class:`TrainingSetup`
    detectors : Dict[:class:`Scope`, :class:`Detector`]
    stats : :class:`ChannelStats`
        The statistics every routed detector expects.
    window : :class:`WindowConfig`
    """

    __slots__ = ('setup', 'detectors', 'stats', 'window')

    def __init__(
            self,
            setup: TrainingSetup,
            detectors: Dict[Scope, Detector],
            stats: ChannelStats,
            window: Optional[WindowConfig] = None
    ):
        for scope in detectors:
            if scope.setup is not setup:
                raise ConfigError(f'scope {scope.name} belongs to {scope.setup.label}, not {setup.label}')
        self.setup: TrainingSetup = setup
        self.detectors: Dict[Scope, Detector] = dict(detectors)
        self.stats: ChannelStats = stats
        self.window: WindowConfig = window or WindowConfig()

    @classmethod
    def from_checkpoints(cls, checkpoints: Iterable[Checkpoint]) -> DetectorRouter:
        """
        Raises
        ------
        :class:`ConfigError`
            No checkpoints, or they disagree on setup, statistics or windowing.
        """
        checkpoints = list(checkpoints)
        if not checkpoints:
            raise ConfigError('the monitor needs at least one checkpoint')

        first = checkpoints[0].metadata
        setup = TrainingSetup.parse(first.setup)
        detectors: Dict[Scope, Detector] = {}
        for checkpoint in checkpoints:
            meta = checkpoint.metadata
            if TrainingSetup.parse(meta.setup) is not setup:
                raise ConfigError(f'checkpoints mix the {first.setup} and {meta.setup} setups')
            if meta.stats != first.stats or meta.window != first.window:
                raise ConfigError('checkpoints were fitted with different channel statistics or windowing')
            scope = Scope(
                setup,
                Task.parse(meta.task) if meta.task else None,
                Gesture.parse(meta.gesture) if meta.gesture else None,
            )
            if scope in detectors:
                raise ConfigError(f'two checkpoints cover scope {scope.name}')
            detectors[scope] = checkpoint.detector()
        return cls(setup, detectors, first.stats, first.window)

    def route(self, task: Task, gesture: Gesture) -> Optional[Detector]:
        return self.detectors.get(scope_for(self.setup, task, gesture))

    def __repr__(self):
        return f'<DetectorRouter setup={self.setup.label} scopes={len(self.detectors)}>'


async def replay_stream(trial: TrialRecord, rate: float = 1.0) -> AsyncIterator[StreamEvent]:
    """
    Replays the frames of a trial.

    Frame ``n`` is released ``n / (30 * rate)`` seconds after the start; a rate
    of ``0`` releases every frame without sleeping.

    Raises
    ------
    :class:`ConfigError`
        ``rate`` is negative.
    """
    if rate < 0:
        raise ConfigError(f'replay rate must be non-negative, got {rate}')

    instances = sorted(trial.gesture_instances, key=lambda instance: instance.start_frame)
    position = 0
    loop = asyncio.get_running_loop()
    started = loop.time()

    for frame in range(1, len(trial.samples) + 1):
        if rate > 0:
            delay = started + frame / (SAMPLE_RATE_HZ * rate) - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)

        while position < len(instances) and instances[position].end_frame < frame:
            position += 1
        instance = None
        if position < len(instances) and instances[position].start_frame <= frame:
            instance = instances[position]

        yield StreamEvent(
            frame=frame, timestamp=time.perf_counter(), instance=instance, sample=trial.samples[frame - 1]
        )


class WindowAssembler:
    """
    Builds the windows of a trial frame by frame.

    Every ``downsample_factor``-th frame of a labeled, supported gesture instance
    is converted to the 26 feature channels and buffered. A full window is emitted
    as soon as its last sample arrives; the final frame of an instance flushes a
    short buffer as one padded window or a logged skip. The windows equal the
    offline :func:`slide_gesture_windows` output exactly.

    Parameters
    ----------
    trial_id : :class:`str`
    task : :class:`Task`
    stats : :class:`ChannelStats`
    cfg : Optional[:class:`WindowConfig`]
    gestures : Optional[Sequence[:class:`Gesture`]]
        Restricts assembly to these gestures.
    """

    def __init__(
            self,
            trial_id: str,
            task: Task,
            stats: ChannelStats,
            cfg: Optional[WindowConfig] = None,
            *,
            gestures: Optional[Sequence[Gesture]] = None
    ):
        self.trial_id: str = trial_id
        self.task: Task = task
        self.stats: ChannelStats = stats
        self.cfg: WindowConfig = cfg or WindowConfig()
        self.gestures: Optional[Sequence[Gesture]] = gestures
        self.skips: List[WindowSkip] = []
        self._instance: Optional[GestureInstance] = None
        self._columns: List[np.ndarray] = []
        self._last: Optional[StreamEvent] = None

    def _wanted(self, instance: Optional[GestureInstance]) -> bool:
        if instance is None or not instance.supported or instance.error_label is None:
            return False
        return self.gestures is None or instance.gesture in self.gestures

    def _window(self, data: np.ndarray, offset: int, event: StreamEvent) -> AssembledWindow:
        instance = self._instance
        window = FeatureWindow(
            data=data,
            gesture=instance.gesture,
            task=self.task,
            label=instance.error_label,
            source=WindowSource(self.trial_id, instance.index, offset),
        )
        return AssembledWindow(window, event.frame, event.timestamp)

    def push(self, event: StreamEvent) -> List[AssembledWindow]:
        """Consumes one frame and returns the windows it completes."""
        emitted: List[AssembledWindow] = []
        if self._instance is not None and event.instance is not self._instance:
            emitted.extend(self.flush())

        if not self._wanted(event.instance):
            return emitted

        self._instance = event.instance
        self._last = event
        cfg = self.cfg
        if (event.frame - event.instance.start_frame) % cfg.downsample_factor == 0:
            sequence = KinematicSequence.from_samples([event.sample])
            self._columns.append(extract_feature_channels(sequence)[:, 0])

            n = len(self._columns)
            if n >= cfg.window_length and (n - cfg.window_length) % cfg.stride == 0:
                offset = n - cfg.window_length
                block = np.stack(self._columns[offset:], axis=1)
                emitted.append(self._window(normalize(block, self.stats), offset, event))

        if event.frame == event.instance.end_frame:
            emitted.extend(self.flush())
        return emitted

    def flush(self) -> List[AssembledWindow]:
        """Closes the current instance: pads or skips a buffer shorter than one window."""
        instance, event, columns = self._instance, self._last, self._columns
        emitted: List[AssembledWindow] = []
        n = len(columns)
        if instance is not None and n < self.cfg.window_length:
            if n >= self.cfg.min_padded_length:
                block = normalize(np.stack(columns, axis=1), self.stats)
                emitted.append(self._window(pad_to_window(block, self.cfg), 0, event))
            else:
                log.warning(
                    '%s gesture %d (%s) is %d samples long after downsampling, skipped',
                    self.trial_id, instance.index, instance.gesture.value, n
                )
                self.skips.append(WindowSkip(self.trial_id, instance.index, n))

        self._instance = None
        self._columns = []
        self._last = None
        return emitted


async def assemble_windows(stream: AsyncIterator[StreamEvent], assembler: WindowAssembler) -> AsyncIterator[AssembledWindow]:
    async for event in stream:
        for item in assembler.push(event):
            yield item
    for item in assembler.flush():
        yield item


async def detect_stream(
        windows: AsyncIterator[AssembledWindow],
        router: DetectorRouter
) -> AsyncIterator[DetectionEvent]:
    """
    Classifies assembled windows in arrival order.

    Detection runs in a worker thread so the replay keeps its pace. A window whose
    scope has no detector yields an unmonitored event.
    """
    budget = stride_period_ms(router.window)
    async for item in windows:
        window = item.window
        detector = router.route(window.task, window.gesture)
        if detector is None:
            yield DetectionEvent(
                frame=item.frame, source=window.source, task=window.task, gesture=window.gesture,
                verdict=None, score=None, latency_ms=(time.perf_counter() - item.completed_at) * 1000.0,
                unmonitored=True, label=window.label
            )
            continue

        result = await asyncio.to_thread(detector.detect, window)
        latency = (time.perf_counter() - item.completed_at) * 1000.0
        yield DetectionEvent(
            frame=item.frame, source=window.source, task=window.task, gesture=window.gesture,
            verdict=result.label, score=result.probability, latency_ms=latency, model_ms=result.elapsed_ms,
            violation=latency > budget, label=window.label
        )


async def monitor_trial(
        trial: TrialRecord,
        router: DetectorRouter,
        *,
        rate: float = 1.0,
        gestures: Optional[Sequence[Gesture]] = None,
        output: Optional[IO[str]] = None,
        sink: Any = None
) -> MonitorSummary:
    """
    Replays a trial through assembly and detection.

    Assembly and detection run as two tasks joined by an unbounded queue, so a slow
    detector delays verdicts (flagged as violations) but never drops windows.

    Parameters
    ----------
    trial : :class:`TrialRecord`
    router : :class:`DetectorRouter`
    rate : :class:`float`
        Replay speed; ``1.0`` is real time, ``0`` as fast as possible.
    gestures : Optional[Sequence[:class:`Gesture`]]
        Restricts assembly to these gestures.
    output : Optional[IO[:class:`str`]]
        Receives one JSON line per event.
    sink : Optional[:class:`HTTPClient`]
        Receives every event and the summary.

    Returns
    -------
    :class:`MonitorSummary`
    """
    assembler = WindowAssembler(trial.id, trial.task, router.stats, router.window, gestures=gestures)
    queue: asyncio.Queue = asyncio.Queue()
    done = object()

    async def produce() -> None:
        try:
            async for item in assemble_windows(replay_stream(trial, rate), assembler):
                await queue.put(item)
        finally:
            await queue.put(done)

    async def drain() -> AsyncIterator[AssembledWindow]:
        while True:
            item = await queue.get()
            if item is done:
                return
            yield item

    producer = asyncio.create_task(produce())
    events: List[DetectionEvent] = []
    try:
        async for event in detect_stream(drain(), router):
            events.append(event)
            if output is not None:
                output.write(event.to_json() + '\n')
            if sink is not None:
                await sink.post_event(event)
    finally:
        await producer

    summary = MonitorSummary(events, budget_ms=stride_period_ms(router.window), skips=assembler.skips)
    if sink is not None:
        await sink.post_summary(summary)
    log.info(
        '%s: %d windows, %d unmonitored, mean latency %s ms',
        trial.id, summary.windows, summary.unmonitored, summary.row()['mean_latency_ms'] or '-'
    )
    return summary
