"""
Binary checkpoint format.

::

    b"EGD1"
    u32 little-endian   length of the metadata block in bytes
    UTF-8 JSON          metadata, keys sorted, no whitespace
    float32 LE payload  parameters and buffers in manifest order,
                        then the reference windows of a Siamese model

The metadata holds ``format_version``, ``tool_version``, ``architecture``,
``config``, ``stats``, ``window``, ``setup``, ``scope``, ``seed``,
``parameters`` (a list of ``{"name", "shape", "offset"}``, offsets in bytes
into the payload) and ``references`` (``{"shape", "offset"}`` or ``null``).
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .config import VERSION
from .errors import CheckpointError, ConfigError, ManifestMismatch, NotACheckpoint, TruncatedCheckpoint, VersionMismatch
from .networks import ModelConfig, Network, build_model
from .preprocess import ChannelStats, WindowConfig
from .training import Detector, ReferenceSet

__all__ = (
    'MAGIC',
    'FORMAT_VERSION',
    'CheckpointMetadata',
    'Checkpoint',
    'save_checkpoint',
    'load_checkpoint',
)

log = logging.getLogger(__name__)

MAGIC = b'EGD1'
FORMAT_VERSION = 1

_HEADER = struct.Struct('<4sI')
_FLOAT = np.dtype('<f4')


class CheckpointMetadata:
    """
    What a checkpoint records besides the parameters.

    Attributes
    ----------
    stats : :class:`ChannelStats`
        The statistics inputs must be normalized with.
    setup : :class:`str`
        The training setup tag, such as ``"gst"``.
    task : Optional[:class:`str`]
        The task the model is scoped to, ``None`` when pooled.
    gesture : Optional[:class:`str`]
        The gesture the model is scoped to, ``None`` when pooled.
    seed : :class:`int`
    window : :class:`WindowConfig`
    tool_version : :class:`str`
    """

    __slots__ = ('stats', 'setup', 'task', 'gesture', 'seed', 'window', 'tool_version')

    def __init__(
            self,
            *,
            stats: ChannelStats,
            setup: str,
            task: Optional[str] = None,
            gesture: Optional[str] = None,
            seed: int = 0,
            window: Optional[WindowConfig] = None,
            tool_version: str = VERSION
    ):
        self.stats: ChannelStats = stats
        self.setup: str = setup
        self.task: Optional[str] = task
        self.gesture: Optional[str] = gesture
        self.seed: int = seed
        self.window: WindowConfig = window or WindowConfig()
        self.tool_version: str = tool_version

    def __repr__(self):
        return f'<CheckpointMetadata setup={self.setup} task={self.task} gesture={self.gesture} seed={self.seed}>'


class Checkpoint:
    """
    A loaded checkpoint.

    Attributes
    ----------
    network : :class:`Network`
    metadata : :class:`CheckpointMetadata`
    references : Optional[:class:`numpy.ndarray`]
        The reference windows of a Siamese model, shape ``(R, 26, 30)``.
    """

    __slots__ = ('network', 'metadata', 'references')

    def __init__(self, network: Network, metadata: CheckpointMetadata, references: Optional[np.ndarray] = None):
        self.network: Network = network
        self.metadata: CheckpointMetadata = metadata
        self.references: Optional[np.ndarray] = references

    def detector(self) -> Detector:
        if not self.network.siamese:
            return Detector(self.network)
        return Detector(self.network, ReferenceSet(self.references))

    def __repr__(self):
        return f'<Checkpoint network={self.network!r} metadata={self.metadata!r}>'


def _encode(network: Network, metadata: CheckpointMetadata, references: Optional[np.ndarray]) -> bytes:
    chunks: List[bytes] = []
    manifest: List[Dict[str, Any]] = []
    offset = 0

    for name, parameter in network.params.items():
        chunk = parameter.value.astype(_FLOAT).tobytes()
        manifest.append({'name': name, 'shape': list(parameter.shape), 'offset': offset})
        chunks.append(chunk)
        offset += len(chunk)

    reference_entry = None
    if references is not None:
        chunk = np.asarray(references).astype(_FLOAT).tobytes()
        reference_entry = {'shape': list(np.shape(references)), 'offset': offset}
        chunks.append(chunk)

    header = {
        'format_version': FORMAT_VERSION,
        'tool_version': metadata.tool_version,
        'architecture': network.architecture.value,
        'config': network.config.to_dict(),
        'stats': metadata.stats.to_dict(),
        'window': metadata.window.to_dict(),
        'setup': metadata.setup,
        'scope': {'task': metadata.task, 'gesture': metadata.gesture},
        'seed': metadata.seed,
        'parameters': manifest,
        'references': reference_entry,
    }
    blob = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return _HEADER.pack(MAGIC, len(blob)) + blob + b''.join(chunks)


def save_checkpoint(
        network: Network,
        metadata: CheckpointMetadata,
        path: Union[str, Path],
        *,
        references: Optional[Union[ReferenceSet, np.ndarray]] = None
) -> None:
    """
    Writes ``network`` and ``metadata`` to ``path``.

    Siamese networks need their ``references``: the normal windows they vote against.

    Raises
    ------
    :class:`ConfigError`
        A Siamese network is saved without references.
    """
    if isinstance(references, ReferenceSet):
        references = references.data
    if network.siamese and references is None:
        raise ConfigError('a Siamese checkpoint must carry its reference windows')
    Path(path).write_bytes(_encode(network, metadata, references))
    log.info('saved %s checkpoint to %s', network.architecture.value, path)


def _read_floats(payload: bytes, offset: int, shape: List[int], what: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    end = offset + count * _FLOAT.itemsize
    if offset < 0 or end > len(payload):
        raise TruncatedCheckpoint(f'payload ends before {what} ({len(payload)} < {end} bytes)')
    return np.frombuffer(payload, dtype=_FLOAT, count=count, offset=offset).astype(np.float64).reshape(shape)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Reads a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    :class:`NotACheckpoint`
        The file does not start with ``EGD1`` or its metadata is not JSON.
    :class:`VersionMismatch`
        The format version is not :data:`FORMAT_VERSION`.
    :class:`TruncatedCheckpoint`
        The file ends inside the header, the metadata or the payload.
    :class:`ManifestMismatch`
        The parameter manifest does not match the network its config describes.

    Returns
    -------
    :class:`Checkpoint`
    """
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise NotACheckpoint(f'{path} is not a checkpoint')
    if len(raw) < _HEADER.size:
        raise TruncatedCheckpoint(f'{path} ends inside the header')

    _, length = _HEADER.unpack_from(raw)
    end = _HEADER.size + length
    if len(raw) < end:
        raise TruncatedCheckpoint(f'{path} ends inside the metadata')
    try:
        header = json.loads(raw[_HEADER.size:end].decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as exc:
        raise NotACheckpoint(f'{path} holds unreadable metadata ({exc})')

    version = header.get('format_version')
    if version != FORMAT_VERSION:
        raise VersionMismatch(f'{path} has format version {version}, expected {FORMAT_VERSION}')

    try:
        config = ModelConfig.from_dict(header['config'])
        metadata = CheckpointMetadata(
            stats=ChannelStats.from_dict(header['stats']),
            setup=header['setup'],
            task=header['scope']['task'],
            gesture=header['scope']['gesture'],
            seed=header['seed'],
            window=WindowConfig.from_dict(header['window']),
            tool_version=header['tool_version'],
        )
        manifest = header['parameters']
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f'{path} holds incomplete metadata ({exc})')

    network = build_model(config)
    expected = [(name, list(shape)) for name, shape in network.params.manifest()]
    found = [(entry['name'], list(entry['shape'])) for entry in manifest]
    if expected != found:
        raise ManifestMismatch(f'{path}: parameter manifest does not match a {config.architecture.value} network')

    payload = raw[end:]
    consumed = 0
    for entry in manifest:
        values = _read_floats(payload, entry['offset'], entry['shape'], entry['name'])
        network.params[entry['name']].value[...] = values
        consumed = max(consumed, entry['offset'] + values.size * _FLOAT.itemsize)

    references = None
    if header.get('references') is not None:
        entry = header['references']
        references = _read_floats(payload, entry['offset'], entry['shape'], 'the reference windows')
        consumed = max(consumed, entry['offset'] + references.size * _FLOAT.itemsize)
    elif network.siamese:
        raise ManifestMismatch(f'{path}: Siamese checkpoint carries no reference windows')

    if consumed != len(payload):
        raise ManifestMismatch(f'{path}: payload holds {len(payload) - consumed} bytes beyond the manifest')

    log.debug('loaded %s checkpoint from %s', config.architecture.value, path)
    return Checkpoint(network, metadata, references)
