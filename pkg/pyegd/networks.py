from __future__ import annotations

import logging
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import N_CHANNELS, WINDOW_LENGTH
from .errors import ConfigError, ShapeError
from .layers import (
    EVAL,
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    ForwardContext,
    Layer,
    LSTM,
    MaxPool1d,
    ParameterSet,
    ReLU,
    Sequential,
    Sigmoid,
    Transpose,
)

__all__ = (
    'Architecture',
    'ModelConfig',
    'Network',
    'SingleNetwork',
    'SiameseNetwork',
    'build_model',
)

log = logging.getLogger(__name__)


class Architecture(Enum):
    """
    Specifies the network family.

    .. attribute:: cnn

        Two convolutional blocks and a fully connected head.

    .. attribute:: lstm

        Three stacked LSTM layers and a fully connected head.

    .. attribute:: siamese_cnn

        Twin weight-shared convolutional encoders compared by a head.

    .. attribute:: siamese_lstm

        Twin weight-shared LSTM encoders compared by a head.
    """

    cnn = 'cnn'
    lstm = 'lstm'
    siamese_cnn = 'siamese-cnn'
    siamese_lstm = 'siamese-lstm'

    @property
    def siamese(self) -> bool:
        return self in (Architecture.siamese_cnn, Architecture.siamese_lstm)

    @property
    def recurrent(self) -> bool:
        return self in (Architecture.lstm, Architecture.siamese_lstm)

    @classmethod
    def parse(cls, token: str) -> Architecture:
        token = token.strip().lower().replace('_', '-')
        for member in cls:
            if token == member.value:
                return member
        raise ConfigError(f'unknown architecture {token!r}; expected one of {", ".join(m.value for m in cls)}')


class ModelConfig:
    """
    Architecture and training hyperparameters of one model.

    Attributes
    ----------
    architecture : :class:`Architecture`
    conv_filters : Tuple[:class:`int`, ...]
        Filters per convolutional block.
    kernel_size : :class:`int`
    pool_size : :class:`int`
    dropout : :class:`float`
        Dropout inside the convolutional blocks and, for the LSTM network,
        between the fully connected layers.
    lstm_hidden : :class:`int`
    lstm_layers : :class:`int`
    head_widths : Tuple[:class:`int`, ...]
        Hidden widths of the fully connected head, before the single output unit.
    learning_rate : :class:`float`
    batch_size : :class:`int`
    epochs : :class:`int`
    seed : :class:`int`
        Seeds initialization, shuffling, dropout and pair sampling.
    reference_cap : Optional[:class:`int`]
        Largest reference set a Siamese model votes against; ``None`` keeps every normal window.
    pair_cap : Optional[:class:`int`]
        Largest number of training pairs per Siamese model; ``None`` keeps every pair.
    """

    __slots__ = (
        'architecture', 'conv_filters', 'kernel_size', 'pool_size', 'dropout', 'lstm_hidden', 'lstm_layers',
        'head_widths', 'learning_rate', 'batch_size', 'epochs', 'seed', 'reference_cap', 'pair_cap',
    )

    def __init__(
            self,
            architecture: Union[Architecture, str] = Architecture.cnn,
            *,
            conv_filters: Sequence[int] = (64, 32),
            kernel_size: int = 3,
            pool_size: int = 2,
            dropout: float = 0.2,
            lstm_hidden: int = 64,
            lstm_layers: int = 3,
            head_widths: Sequence[int] = (128, 64, 32),
            learning_rate: float = 1e-3,
            batch_size: int = 32,
            epochs: int = 100,
            seed: int = 0,
            reference_cap: Optional[int] = None,
            pair_cap: Optional[int] = None
    ):
        if not isinstance(architecture, Architecture):
            architecture = Architecture.parse(architecture)
        self.architecture: Architecture = architecture
        self.conv_filters: Tuple[int, ...] = tuple(int(f) for f in conv_filters)
        self.kernel_size: int = int(kernel_size)
        self.pool_size: int = int(pool_size)
        self.dropout: float = float(dropout)
        self.lstm_hidden: int = int(lstm_hidden)
        self.lstm_layers: int = int(lstm_layers)
        self.head_widths: Tuple[int, ...] = tuple(int(w) for w in head_widths)
        self.learning_rate: float = float(learning_rate)
        self.batch_size: int = int(batch_size)
        self.epochs: int = int(epochs)
        self.seed: int = int(seed)
        self.reference_cap: Optional[int] = None if reference_cap is None else int(reference_cap)
        self.pair_cap: Optional[int] = None if pair_cap is None else int(pair_cap)
        self.validate()

    def validate(self) -> None:
        if self.architecture.recurrent:
            if self.lstm_hidden < 1 or self.lstm_layers < 1:
                raise ConfigError('lstm_hidden and lstm_layers must be positive')
        else:
            if not self.conv_filters or min(self.conv_filters) < 1:
                raise ConfigError('conv_filters must hold at least one positive filter count')
            if self.kernel_size < 1 or self.pool_size < 1:
                raise ConfigError('kernel_size and pool_size must be positive')
        if not self.head_widths or min(self.head_widths) < 1:
            raise ConfigError('head_widths must hold at least one positive width')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f'dropout must lie in [0, 1), got {self.dropout}')
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError('learning_rate and batch_size must be positive and epochs non-negative')
        for name in ('reference_cap', 'pair_cap'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f'{name} must be positive when set, got {value}')

    def replace(self, **changes: Any) -> ModelConfig:
        data = self.to_dict()
        data.update(changes)
        return ModelConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {name: getattr(self, name) for name in self.__slots__}
        data['architecture'] = self.architecture.value
        data['conv_filters'] = list(self.conv_filters)
        data['head_widths'] = list(self.head_widths)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> ModelConfig:
        """
        Builds a config from a mapping such as the ``--config`` JSON overrides.

        Raises
        ------
        :class:`ConfigError`
            A key is unknown or a value is invalid.
        """
        unknown = set(data) - set(cls.__slots__)
        if unknown:
            raise ConfigError(f'unknown model settings: {", ".join(sorted(unknown))}')
        data = dict(data)
        architecture = data.pop('architecture', Architecture.cnn)
        try:
            return cls(architecture, **data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f'invalid model settings: {exc}')

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ModelConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return (
            f'<ModelConfig architecture={self.architecture.value} learning_rate={self.learning_rate} '
            f'batch_size={self.batch_size} epochs={self.epochs} seed={self.seed}>'
        )


class Network:
    """
    Base class of the four networks.

    Attributes
    ----------
    config : :class:`ModelConfig`
    encoder : :class:`Sequential`
        Maps a batch of ``26 x 30`` windows to flat feature vectors.
    head : :class:`Sequential`
        Maps feature vectors to one probability each.
    params : :class:`ParameterSet`
        Every parameter and buffer, named ``encoder.*`` then ``head.*``.
    """

    siamese = False

    def __init__(self, config: ModelConfig, encoder: Sequential, head: Sequential):
        self.config: ModelConfig = config
        self.encoder: Sequential = encoder
        self.head: Sequential = head
        self.params: ParameterSet = ParameterSet(
            [(f'encoder.{name}', p) for name, p in encoder.parameters()]
            + [(f'head.{name}', p) for name, p in head.parameters()]
        )

    @property
    def architecture(self) -> Architecture:
        return self.config.architecture

    def forward(self, inputs: Any, ctx: ForwardContext) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dprob: np.ndarray, cache: Any) -> None:
        raise NotImplementedError

    def __repr__(self):
        return f'<{type(self).__name__} architecture={self.architecture.value} parameters={self.params.count()}>'


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (N_CHANNELS, WINDOW_LENGTH):
        raise ShapeError(f'expected windows of shape ({N_CHANNELS}, {WINDOW_LENGTH}), got {x.shape}')
    return x


class SingleNetwork(Network):
    """A CNN or LSTM classifier mapping one window to an error probability."""

    def forward(self, inputs: np.ndarray, ctx: ForwardContext) -> Tuple[np.ndarray, Any]:
        features, encoder_cache = self.encoder.forward(_as_batch(inputs), ctx)
        prob, head_cache = self.head.forward(features, ctx)
        return prob[:, 0], (encoder_cache, head_cache)

    def backward(self, dprob: np.ndarray, cache: Any) -> None:
        encoder_cache, head_cache = cache
        dfeatures = self.head.backward(dprob[:, None], head_cache)
        self.encoder.backward(dfeatures, encoder_cache)

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(windows, EVAL)[0]


class SiameseNetwork(Network):
    """
    Twin weight-shared encoders; the head sees ``|e(a) - e(b)|``.

    Each branch is encoded in its own call so that the output is exactly
    symmetric in its two inputs.
    """

    siamese = True

    def forward(self, inputs: Tuple[np.ndarray, np.ndarray], ctx: ForwardContext) -> Tuple[np.ndarray, Any]:
        a, b = inputs
        ea, cache_a = self.encoder.forward(_as_batch(a), ctx)
        eb, cache_b = self.encoder.forward(_as_batch(b), ctx)
        prob, head_cache = self.compare(ea, eb, ctx)
        return prob, (cache_a, cache_b, ea - eb, head_cache)

    def backward(self, dprob: np.ndarray, cache: Any) -> None:
        cache_a, cache_b, difference, head_cache = cache
        ddistance = self.head.backward(dprob[:, None], head_cache)
        ddifference = ddistance * np.sign(difference)
        self.encoder.backward(ddifference, cache_a)
        self.encoder.backward(-ddifference, cache_b)

    def embed(self, windows: np.ndarray) -> np.ndarray:
        """Encodes windows in eval mode."""
        return self.encoder.forward(_as_batch(windows), EVAL)[0]

    def compare(self, ea: np.ndarray, eb: np.ndarray, ctx: ForwardContext = EVAL) -> Tuple[np.ndarray, Any]:
        prob, head_cache = self.head.forward(np.abs(ea - eb), ctx)
        return prob[:, 0], head_cache

    def predict(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.forward((a, b), EVAL)[0]


def _cnn_encoder(config: ModelConfig, rng: np.random.Generator) -> Sequential:
    layers: List[Layer] = []
    channels = N_CHANNELS
    for filters in config.conv_filters:
        layers += [
            Conv1d(channels, filters, config.kernel_size, rng),
            ReLU(),
            MaxPool1d(config.pool_size),
            Dropout(config.dropout),
            BatchNorm1d(filters),
        ]
        channels = filters
    layers.append(Flatten())
    return Sequential(layers)


def _lstm_encoder(config: ModelConfig, rng: np.random.Generator) -> Sequential:
    layers: List[Layer] = [Transpose()]
    features = N_CHANNELS
    for _ in range(config.lstm_layers):
        layers.append(LSTM(features, config.lstm_hidden, rng))
        features = config.lstm_hidden
    layers.append(Flatten())
    return Sequential(layers)


def _head(in_features: int, config: ModelConfig, rng: np.random.Generator, dropout: float) -> Sequential:
    layers: List[Layer] = []
    for width in config.head_widths:
        layers += [Dense(in_features, width, rng), ReLU()]
        if dropout:
            layers.append(Dropout(dropout))
        in_features = width
    layers += [Dense(in_features, 1, rng), Sigmoid()]
    return Sequential(layers)


def build_model(config: ModelConfig) -> Network:
    """
    Builds and initializes the network ``config`` describes, seeded by ``config.seed``.

    Raises
    ------
    :class:`ShapeError`
        The layer shapes do not chain for a ``26 x 30`` window.

    Returns
    -------
    :class:`Network`
    """
    config.validate()
    rng = np.random.default_rng([config.seed, 0xC0DE])
    architecture = config.architecture

    encoder = _lstm_encoder(config, rng) if architecture.recurrent else _cnn_encoder(config, rng)
    (features,) = encoder.output_shape((N_CHANNELS, WINDOW_LENGTH))

    head_dropout = config.dropout if architecture is Architecture.lstm else 0.0
    head = _head(features, config, rng, head_dropout)
    if head.output_shape((features,)) != (1,):
        raise ShapeError('the head must end in a single output unit')

    network = SiameseNetwork(config, encoder, head) if architecture.siamese else SingleNetwork(config, encoder, head)
    log.debug('built %r with %d encoder features', network, features)
    return network
