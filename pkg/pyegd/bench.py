from __future__ import annotations

import csv
import logging
import time
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from .preprocess import FeatureWindow

__all__ = ('WARMUP_ITERATIONS', 'LatencyReport', 'latency_bench')

log = logging.getLogger(__name__)

WARMUP_ITERATIONS = 10


class LatencyReport:
    """
    Per-window inference latency.

    Attributes
    ----------
    architecture : :class:`str`
    samples_ms : :class:`numpy.ndarray`
        Every timed detection, warm-up excluded.
    reference_size : Optional[:class:`int`]
        Size of the Siamese reference set, ``None`` for single networks.
    """

    __slots__ = ('architecture', 'samples_ms', 'reference_size')

    def __init__(self, *, architecture: str, samples_ms: np.ndarray, reference_size: Optional[int] = None):
        self.architecture: str = architecture
        self.samples_ms: np.ndarray = np.asarray(samples_ms, dtype=np.float64)
        self.reference_size: Optional[int] = reference_size

    @property
    def count(self) -> int:
        return len(self.samples_ms)

    @property
    def mean_ms(self) -> Optional[float]:
        return float(self.samples_ms.mean()) if self.count else None

    @property
    def p95_ms(self) -> Optional[float]:
        return float(np.percentile(self.samples_ms, 95)) if self.count else None

    def row(self) -> Dict[str, Any]:
        return {
            'architecture': self.architecture,
            'windows': self.count,
            'reference_size': '' if self.reference_size is None else self.reference_size,
            'mean_ms': '' if self.mean_ms is None else f'{self.mean_ms:.4f}',
            'p95_ms': '' if self.p95_ms is None else f'{self.p95_ms:.4f}',
        }

    def to_csv(self, path: Union[str, Path]) -> None:
        row = self.row()
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.DictWriter(file, fieldnames=list(row), lineterminator='\n')
            writer.writeheader()
            writer.writerow(row)

    def __repr__(self):
        return f'<LatencyReport architecture={self.architecture} count={self.count} mean_ms={self.mean_ms}>'


def latency_bench(
        detector: Any,
        windows: Sequence[FeatureWindow],
        repetitions: int = 1,
        *,
        warmup: int = WARMUP_ITERATIONS
) -> LatencyReport:
    """
    Times ``detector.detect`` on every window, ``repetitions`` times over.

    The first ``warmup`` detections are discarded. Siamese timings include voting
    against the whole reference set.

    Parameters
    ----------
    detector : :class:`Detector`
        A trained detector, such as :meth:`Checkpoint.detector` returns.
    windows : Sequence[:class:`FeatureWindow`]
    repetitions : :class:`int`
    warmup : :class:`int`

    Returns
    -------
    :class:`LatencyReport`
        Empty when there are no windows.
    """
    network = detector.network
    references = getattr(detector, 'references', None)
    reference_size = len(references) if references is not None else None

    if not windows:
        return LatencyReport(
            architecture=network.architecture.value, samples_ms=np.zeros(0), reference_size=reference_size
        )

    for i in range(warmup):
        detector.detect(windows[i % len(windows)])

    samples = []
    for _ in range(max(repetitions, 1)):
        for window in windows:
            started = time.perf_counter()
            detector.detect(window)
            samples.append((time.perf_counter() - started) * 1000.0)

    report = LatencyReport(
        architecture=network.architecture.value, samples_ms=np.array(samples), reference_size=reference_size
    )
    log.info('%s: mean %.3f ms, p95 %.3f ms over %d windows', report.architecture, report.mean_ms, report.p95_ms, report.count)
    return report
