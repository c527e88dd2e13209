from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from rich.table import Table
from scipy.stats import entropy

from .config import N_CHANNELS
from .dataset import DatasetManifest
from .gestures import EXPERIMENT_GESTURES, Gesture, Task
from .preprocess import extract_feature_channels

__all__ = (
    'KLD_BINS',
    'KLD_SMOOTHING',
    'KLD_MIN_SAMPLES',
    'KldMatrix',
    'symmetric_kl',
    'channel_divergence',
    'kld_matrix',
)

log = logging.getLogger(__name__)

KLD_BINS = 50
KLD_SMOOTHING = 1e-10
KLD_MIN_SAMPLES = 30

ClassKey = Tuple[Task, Gesture]


def symmetric_kl(p: np.ndarray, q: np.ndarray, eps: float = KLD_SMOOTHING) -> float:
    """
    ``(D(P||Q) + D(Q||P)) / 2`` in nats of two histograms, after adding ``eps``
    to every bin and renormalizing.
    """
    p = np.asarray(p, dtype=np.float64) + eps
    q = np.asarray(q, dtype=np.float64) + eps
    return 0.5 * (float(entropy(p, q)) + float(entropy(q, p)))


def channel_divergence(a: np.ndarray, b: np.ndarray, *, bins: int = KLD_BINS, eps: float = KLD_SMOOTHING) -> float:
    """
    Symmetrized divergence between two 1-D samples histogrammed on their shared range.
    """
    low = min(float(a.min()), float(b.min()))
    high = max(float(a.max()), float(b.max()))
    p, _ = np.histogram(a, bins=bins, range=(low, high))
    q, _ = np.histogram(b, bins=bins, range=(low, high))
    return symmetric_kl(p, q, eps)


class KldMatrix:
    """
    Average per-channel divergence between the normal samples of every pair of classes.

    Attributes
    ----------
    classes : List[Tuple[:class:`Task`, :class:`Gesture`]]
    values : :class:`numpy.ndarray`
        Symmetric, shape ``(n, n)``, in nats.
    """

    __slots__ = ('classes', 'values')

    def __init__(self, classes: List[ClassKey], values: np.ndarray):
        self.classes: List[ClassKey] = classes
        self.values: np.ndarray = values

    @staticmethod
    def class_name(key: ClassKey) -> str:
        return f'{key[0].short}-{key[1].value}'

    def __getitem__(self, pair: Tuple[ClassKey, ClassKey]) -> float:
        a, b = pair
        return float(self.values[self.classes.index(a), self.classes.index(b)])

    def to_csv(self, path: Union[str, Path]) -> None:
        names = [self.class_name(key) for key in self.classes]
        with open(path, 'w', encoding='utf-8', newline='') as file:
            writer = csv.writer(file, lineterminator='\n')
            writer.writerow(['class'] + names)
            for name, row in zip(names, self.values):
                writer.writerow([name] + [f'{value:.6f}' for value in row])

    def table(self) -> Table:
        names = [self.class_name(key) for key in self.classes]
        table = Table(title='average KL divergence of normal gestures (nats)')
        table.add_column('')
        for name in names:
            table.add_column(name, justify='right')
        for name, row in zip(names, self.values):
            table.add_row(name, *(f'{value:.2f}' for value in row))
        return table

    def __repr__(self):
        return f'<KldMatrix classes={len(self.classes)}>'


def _normal_samples(manifest: DatasetManifest, gestures: Sequence[Gesture]) -> Dict[ClassKey, np.ndarray]:
    blocks: Dict[ClassKey, List[np.ndarray]] = {}
    for trial, instance in manifest.instances():
        if instance.gesture not in gestures or instance.error_label != 0:
            continue
        features = extract_feature_channels(trial.instance_samples(instance))
        blocks.setdefault((trial.task, instance.gesture), []).append(features)

    order = {gesture: position for position, gesture in enumerate(gestures)}
    keys = sorted(blocks, key=lambda key: (list(Task).index(key[0]), order[key[1]]))
    return {key: np.concatenate(blocks[key], axis=1) for key in keys}


def kld_matrix(
        manifest: DatasetManifest,
        bins: int = KLD_BINS,
        *,
        gestures: Sequence[Gesture] = EXPERIMENT_GESTURES,
        min_samples: int = KLD_MIN_SAMPLES
) -> KldMatrix:
    """
    Compares the raw 26-channel distributions of the normal instances of every
    (task, gesture) class, before downsampling and normalization.

    Each entry is the symmetrized histogram divergence averaged over channels.
    Classes with fewer than ``min_samples`` raw samples are left out with a warning.

    Returns
    -------
    :class:`KldMatrix`
    """
    samples = _normal_samples(manifest, gestures)
    for key in list(samples):
        if samples[key].shape[1] < min_samples:
            log.warning(
                '%s has %d normal samples, fewer than %d, excluded',
                KldMatrix.class_name(key), samples[key].shape[1], min_samples
            )
            del samples[key]

    classes = list(samples)
    values = np.zeros((len(classes), len(classes)))
    for i, a in enumerate(classes):
        for j in range(i, len(classes)):
            b = classes[j]
            divergence = np.mean([
                channel_divergence(samples[a][c], samples[b][c], bins=bins) for c in range(N_CHANNELS)
            ])
            values[i, j] = values[j, i] = divergence
    return KldMatrix(classes, values)
