from __future__ import annotations

import logging
import time
import weakref
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, EmptyReferenceError, NumericalError, PairingError, ShapeError, TrainingDivergedError
from .layers import EVAL, ForwardContext
from .networks import Architecture, ModelConfig, Network, SiameseNetwork, SingleNetwork, build_model
from .ops import bce_loss
from .optim import AdamState, adam_step
from .preprocess import FeatureWindow

__all__ = (
    'DECISION_THRESHOLD',
    'SiamesePair',
    'DetectionResult',
    'ReferenceSet',
    'Detector',
    'make_training_pairs',
    'min_normal_windows',
    'train_model',
    'train_detector',
    'predict_probability',
    'majority_vote',
    'siamese_vote',
)

log = logging.getLogger(__name__)

DECISION_THRESHOLD = 0.5

# Pairing joins normal windows with each other.
PAIRING_MIN_NORMAL = 2


class SiamesePair:
    """
    Two windows and whether they belong to different classes.

    Attributes
    ----------
    window_a : :class:`FeatureWindow`
        Always a normal window.
    window_b : :class:`FeatureWindow`
    label : :class:`int`
        ``0`` when both windows are normal, ``1`` when ``window_b`` is erroneous.
    """

    __slots__ = ('window_a', 'window_b', 'label')

    def __init__(self, window_a: FeatureWindow, window_b: FeatureWindow, label: int):
        if window_a.label or label != window_b.label:
            raise PairingError('pairs join a normal window with a normal (label 0) or erroneous (label 1) window')
        self.window_a: FeatureWindow = window_a
        self.window_b: FeatureWindow = window_b
        self.label: int = label

    def __repr__(self):
        return f'<SiamesePair a={tuple(self.window_a.source)} b={tuple(self.window_b.source)} label={self.label}>'


class DetectionResult:
    """
    The verdict on one window.

    Attributes
    ----------
    probability : :class:`float`
        The error probability of a single network, or the fraction of reference
        pairs voting "erroneous" for a Siamese network.
    label : :class:`int`
        ``1`` for erroneous.
    elapsed_ms : :class:`float`
        Wall-clock inference time, voting included.
    votes : Optional[:class:`int`]
        Siamese only: reference pairs voting "erroneous".
    references : Optional[:class:`int`]
        Siamese only: size of the reference set.
    """

    __slots__ = ('probability', 'label', 'elapsed_ms', 'votes', 'references')

    def __init__(
            self,
            *,
            probability: float,
            label: int,
            elapsed_ms: float,
            votes: Optional[int] = None,
            references: Optional[int] = None
    ):
        self.probability: float = probability
        self.label: int = label
        self.elapsed_ms: float = elapsed_ms
        self.votes: Optional[int] = votes
        self.references: Optional[int] = references

    def __repr__(self):
        return f'<DetectionResult probability={self.probability:.4f} label={self.label}>'


def _stack(windows: Sequence[FeatureWindow]) -> np.ndarray:
    return np.stack([window.data for window in windows])


class ReferenceSet:
    """
    The normal training windows a Siamese network votes against.

    When ``cap`` is smaller than the number of windows, a seeded subsample is kept.
    Windows are held rounded to float32, the precision of the checkpoint payload.
    Embeddings are computed once per network and dropped with it.
    """

    __slots__ = ('windows', '_data', '_embeddings')

    def __init__(self, windows: Union[Sequence[FeatureWindow], np.ndarray], *, cap: Optional[int] = None, seed: int = 0):
        data = np.asarray(windows, dtype=np.float64) if isinstance(windows, np.ndarray) else None
        items = list(windows) if data is None else []
        count = len(data) if data is not None else len(items)
        if not count:
            raise EmptyReferenceError('a Siamese network needs at least one normal reference window')

        keep = np.arange(count)
        if cap is not None and cap < count:
            keep = np.sort(np.random.default_rng([seed, 0x5EF]).choice(count, size=cap, replace=False))

        if data is None:
            self.windows: List[FeatureWindow] = [items[i] for i in keep]
            self._data: np.ndarray = _stack(self.windows)
        else:
            self.windows = []
            self._data = data[keep]
        self._data = self._data.astype(np.float32).astype(np.float64)
        self._embeddings: weakref.WeakKeyDictionary[SiameseNetwork, np.ndarray] = weakref.WeakKeyDictionary()

    @property
    def data(self) -> np.ndarray:
        """The reference windows, shape ``(R, 26, 30)``."""
        return self._data

    def embeddings(self, network: SiameseNetwork) -> np.ndarray:
        if network not in self._embeddings:
            self._embeddings[network] = network.embed(self._data)
        return self._embeddings[network]

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self):
        return f'<ReferenceSet size={len(self)}>'


def _combination(n: int, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    first, second = np.triu_indices(n, k=1)
    return first[indices], second[indices]


def min_normal_windows(architecture: Architecture) -> int:
    """The fewest normal training windows ``architecture`` can train on."""
    return PAIRING_MIN_NORMAL if architecture.siamese else 1


def make_training_pairs(
        normal: Sequence[FeatureWindow],
        erroneous: Sequence[FeatureWindow],
        seed: int = 0,
        *,
        cap: Optional[int] = None
) -> List[SiamesePair]:
    """
    Builds the balanced Siamese training pairs.

    Every normal window is paired with every erroneous window (label 1), and
    the same number of normal/normal pairs (label 0) is drawn uniformly, with
    replacement, from the distinct unordered pairs of normal windows.

    Parameters
    ----------
    normal : Sequence[:class:`FeatureWindow`]
    erroneous : Sequence[:class:`FeatureWindow`]
    seed : :class:`int`
        Drives the normal/normal draw and the optional cap.
    cap : Optional[:class:`int`]
        Keeps at most this many pairs, half of each label, chosen with ``seed``.

    Raises
    ------
    :class:`PairingError`
        Fewer than two normal or no erroneous windows.

    Returns
    -------
    List[:class:`SiamesePair`]
    """
    if len(normal) < PAIRING_MIN_NORMAL:
        raise PairingError(f'need at least {PAIRING_MIN_NORMAL} normal windows for pairing, got {len(normal)}')
    if not erroneous:
        raise PairingError('need at least 1 erroneous window for pairing, got 0')

    rng = np.random.default_rng([seed, 0xFA1])
    cross = [(i, j) for i in range(len(normal)) for j in range(len(erroneous))]
    if cap is not None and 2 * len(cross) > cap:
        keep = np.sort(rng.choice(len(cross), size=max(cap // 2, 1), replace=False))
        cross = [cross[k] for k in keep]

    n = len(normal)
    drawn = rng.integers(0, n * (n - 1) // 2, size=len(cross))
    first, second = _combination(n, drawn)

    pairs = [SiamesePair(normal[i], erroneous[j], 1) for i, j in cross]
    pairs += [SiamesePair(normal[i], normal[j], 0) for i, j in zip(first.tolist(), second.tolist())]
    return pairs


def _pair_arrays(pairs: Sequence[SiamesePair]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Deduplicates the windows of ``pairs`` into one bank plus index arrays."""
    index: Dict[int, int] = {}
    bank: List[np.ndarray] = []

    def slot(window: FeatureWindow) -> int:
        key = id(window)
        if key not in index:
            index[key] = len(bank)
            bank.append(window.data)
        return index[key]

    a = np.array([slot(pair.window_a) for pair in pairs])
    b = np.array([slot(pair.window_b) for pair in pairs])
    labels = np.array([pair.label for pair in pairs], dtype=np.float64)
    return np.stack(bank), a, b, labels


def train_model(
        config: ModelConfig,
        data: Union[Sequence[FeatureWindow], Sequence[SiamesePair]]
) -> Tuple[Network, List[float]]:
    """
    Trains the network ``config`` describes with mini-batch Adam on the binary cross entropy.

    Single networks train on windows against their labels. Siamese networks
    train on :class:`SiamesePair` objects; given windows instead, the pairs are
    built with :func:`make_training_pairs` from ``config.seed``.
    Parameters are rounded to float32 after the last epoch.

    Raises
    ------
    :class:`PairingError`
        The training data is empty or cannot be paired.
    :class:`TrainingDivergedError`
        The loss or an activation became NaN or Inf.

    Returns
    -------
    Tuple[:class:`Network`, List[:class:`float`]]
        The network and the mean loss of every epoch.
    """
    data = list(data)
    if not data:
        raise PairingError('cannot train on an empty dataset')

    network = build_model(config)
    siamese = config.architecture.siamese

    if siamese and isinstance(data[0], FeatureWindow):
        normal = [w for w in data if not w.label]
        erroneous = [w for w in data if w.label]
        data = make_training_pairs(normal, erroneous, config.seed, cap=config.pair_cap)
    elif siamese != isinstance(data[0], SiamesePair):
        raise ConfigError(f'{config.architecture.value} cannot train on {type(data[0]).__name__} objects')

    if siamese:
        bank, index_a, index_b, labels = _pair_arrays(data)
    else:
        bank = _stack(data)
        labels = np.array([w.label for w in data], dtype=np.float64)

    rng = np.random.default_rng([config.seed, 0x7A1])
    adam = AdamState(network.params, lr=config.learning_rate)
    losses: List[float] = []
    size = len(labels)

    for epoch in range(config.epochs):
        order = rng.permutation(size)
        total = 0.0
        for start in range(0, size, config.batch_size):
            batch = order[start:start + config.batch_size]
            if siamese:
                inputs = (bank[index_a[batch]], bank[index_b[batch]])
            else:
                inputs = bank[batch]

            network.params.zero_grad()
            try:
                prob, cache = network.forward(inputs, ForwardContext(training=True, rng=rng))
                loss, dprob = bce_loss(prob, labels[batch])
                if not np.isfinite(loss):
                    raise NumericalError('loss is not finite')
                network.backward(dprob, cache)
                adam_step(network.params, adam)
            except NumericalError as exc:
                raise TrainingDivergedError(epoch) from exc
            total += loss * len(batch)

        losses.append(total / size)
        log.debug('%s epoch %d loss %.6f', config.architecture.value, epoch, losses[-1])

    network.params.round_to_float32()
    if losses:
        log.info(
            'trained %s on %d %s: loss %.4f -> %.4f',
            config.architecture.value, size, 'pairs' if siamese else 'windows', losses[0], losses[-1]
        )
    return network, losses


def predict_probability(network: Network, window: Union[FeatureWindow, np.ndarray]) -> DetectionResult:
    """
    Runs a single network on one window.

    Raises
    ------
    :class:`ConfigError`
        ``network`` is a Siamese network.
    :class:`ShapeError`
        The window is not ``26 x 30``.
    """
    if not isinstance(network, SingleNetwork):
        raise ConfigError('predict_probability needs a single network; use siamese_vote')
    data = window.data if isinstance(window, FeatureWindow) else np.asarray(window, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f'expected one window, got shape {data.shape}')

    started = time.perf_counter()
    probability = float(network.forward(data[None], EVAL)[0][0])
    elapsed = (time.perf_counter() - started) * 1000.0
    return DetectionResult(
        probability=probability, label=int(probability >= DECISION_THRESHOLD), elapsed_ms=elapsed
    )


def majority_vote(indicators: Sequence[int]) -> int:
    """``1`` when at least half of ``indicators`` are 1; a tie counts as erroneous."""
    indicators = np.asarray(indicators)
    if not indicators.size:
        raise EmptyReferenceError('cannot vote without indicators')
    return int(2 * int(np.count_nonzero(indicators)) >= indicators.size)


def siamese_vote(
        network: SiameseNetwork,
        window: Union[FeatureWindow, np.ndarray],
        references: ReferenceSet
) -> DetectionResult:
    """
    Pairs ``window`` with every reference window and fuses the pair verdicts by majority.

    A pair output at or above 0.5 is a vote for "erroneous".

    Raises
    ------
    :class:`EmptyReferenceError`
        The reference set is empty.
    """
    if not isinstance(network, SiameseNetwork):
        raise ConfigError('siamese_vote needs a Siamese network; use predict_probability')
    if not len(references):
        raise EmptyReferenceError('a Siamese network needs at least one normal reference window')
    data = window.data if isinstance(window, FeatureWindow) else np.asarray(window, dtype=np.float64)

    started = time.perf_counter()
    reference_embeddings = references.embeddings(network)
    embedding = network.embed(data[None])
    prob, _ = network.compare(np.broadcast_to(embedding, reference_embeddings.shape), reference_embeddings)
    indicators = prob >= DECISION_THRESHOLD
    elapsed = (time.perf_counter() - started) * 1000.0

    votes = int(np.count_nonzero(indicators))
    return DetectionResult(
        probability=votes / len(references),
        label=majority_vote(indicators),
        elapsed_ms=elapsed,
        votes=votes,
        references=len(references),
    )


class Detector:
    """
    A trained network ready to classify windows, with its reference set when Siamese.

    Attributes
    ----------
    network : :class:`Network`
    references : Optional[:class:`ReferenceSet`]
    """

    __slots__ = ('network', 'references')

    def __init__(self, network: Network, references: Optional[ReferenceSet] = None):
        if network.siamese and references is None:
            raise EmptyReferenceError('a Siamese detector needs a reference set')
        self.network: Network = network
        self.references: Optional[ReferenceSet] = references

    def detect(self, window: Union[FeatureWindow, np.ndarray]) -> DetectionResult:
        if self.network.siamese:
            return siamese_vote(self.network, window, self.references)
        return predict_probability(self.network, window)

    def __repr__(self):
        return f'<Detector network={self.network!r} references={self.references!r}>'


def train_detector(config: ModelConfig, windows: Sequence[FeatureWindow]) -> Detector:
    """
    Trains a model on the windows of one scope and wraps it as a :class:`Detector`.

    Siamese detectors vote against the normal training windows, capped by
    ``config.reference_cap``.
    """
    network, _ = train_model(config, windows)
    if not network.siamese:
        return Detector(network)
    normal = [window for window in windows if not window.label]
    return Detector(network, ReferenceSet(normal, cap=config.reference_cap, seed=config.seed))
