"""Checkpoint files.

Layout:
    b"TINYATTN" | uint32 LE format version | uint32 LE header length |
    header (canonical JSON, UTF-8) | payload (raw little-endian float64)

The header carries the backbone config, adapter metadata, decoder class count,
the task (name, sequence length, data seed), the producing seed and a tensor
table of (name, shape, offset, nbytes) into the payload. Encoding is canonical,
so load -> save reproduces the file byte for byte.
"""
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.tensor import Tensor
from models.adapter import Placement, TinyAttnAdapter
from models.backbone import Backbone, BackboneConfig, Decoder, TransformerLayer, backbone_shapes
from models.model import TinyAttnModel
from utils.errors import CheckpointError
from utils.file_utils import atomic_write_bytes
from utils.logger import setup_logger

logger = setup_logger(__name__)

MAGIC = b'TINYATTN'
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct('<II')
_DTYPE = np.dtype('<f8')
_ADAPTER_KEYS = ('head_dim', 'merged_scale', 'num_heads', 'placement', 'with_biases')


@dataclass
class Checkpoint:
    backbone_config: BackboneConfig
    tensors: Dict[str, np.ndarray]
    num_classes: int
    adapter: Optional[Dict[str, Any]] = None
    task: str = ''
    task_seq_len: int = 0
    task_seed: int = 0
    seed: int = 0
    format_version: int = FORMAT_VERSION

    def header(self) -> Dict[str, Any]:
        table: List[Dict[str, Any]] = []
        offset = 0
        for name, data in self.tensors.items():
            nbytes = int(data.size) * _DTYPE.itemsize
            table.append({'name': name, 'shape': list(data.shape), 'offset': offset, 'nbytes': nbytes})
            offset += nbytes
        return {
            'format_version': self.format_version,
            'backbone_config': asdict(self.backbone_config),
            'adapter': self.adapter,
            'decoder': {'num_classes': self.num_classes},
            'task': {'name': self.task, 'seq_len': self.task_seq_len, 'seed': self.task_seed},
            'seed': self.seed,
            'tensors': table,
        }


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps(ckpt.header(), sort_keys=True, separators=(',', ':')).encode('utf-8')
    payload = b''.join(np.ascontiguousarray(t, dtype=_DTYPE).tobytes() for t in ckpt.tensors.values())
    return MAGIC + _PREAMBLE.pack(ckpt.format_version, len(header)) + header + payload


def _parse_adapter(meta: Any, num_layers: int) -> Optional[Dict[str, Any]]:
    if meta is None:
        return None
    missing = [k for k in _ADAPTER_KEYS if k not in meta]
    if missing:
        raise KeyError(f"adapter.{missing[0]}")
    if Placement(meta['placement']) is Placement.NONE:
        raise ValueError("adapter placement 'none' with adapter tensors")
    if len(meta['merged_scale']) != num_layers:
        raise ValueError(f"{len(meta['merged_scale'])} merged_scale entries for {num_layers} layers")
    return meta


def decode_checkpoint(raw: bytes, source: str = '<bytes>') -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        CheckpointError: On bad magic, an unsupported version, a malformed or
            incomplete header, duplicate tensor names or a truncated payload.
    """
    start = len(MAGIC) + _PREAMBLE.size
    if len(raw) < start or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f'{source} is not a tinyattn checkpoint')
    version, header_len = _PREAMBLE.unpack_from(raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f'{source} has format version {version}, this build reads {FORMAT_VERSION}')
    try:
        header = json.loads(raw[start:start + header_len].decode('utf-8'))
        config = BackboneConfig(**header['backbone_config']).validate()
        adapter = _parse_adapter(header['adapter'], config.num_layers)
        num_classes = int(header['decoder']['num_classes'])
        task = header['task']
        task_name, task_seq_len, task_seed = str(task['name']), int(task['seq_len']), int(task['seed'])
        seed = int(header['seed'])
        table = [
            (str(e['name']), tuple(int(d) for d in e['shape']), int(e['offset']), int(e['nbytes']))
            for e in header['tensors']
        ]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'{source} has a malformed header: {e!r}') from None

    payload = memoryview(raw)[start + header_len:]
    tensors: Dict[str, np.ndarray] = {}
    expected_offset = 0
    for name, shape, offset, nbytes in table:
        if name in tensors:
            raise CheckpointError(f'{source} lists tensor {name} twice')
        if any(d < 1 for d in shape):
            raise CheckpointError(f'{source}: tensor {name} has non-positive shape {shape}')
        count = int(np.prod(shape, dtype=np.int64))
        if offset != expected_offset or nbytes != count * _DTYPE.itemsize:
            raise CheckpointError(f'{source}: tensor table entry for {name} is inconsistent')
        if offset + nbytes > len(payload):
            raise CheckpointError(f'{source} is truncated (tensor {name})')
        data = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=offset)
        tensors[name] = data.astype(np.float64).reshape(shape)
        expected_offset += nbytes
    if expected_offset != len(payload):
        raise CheckpointError(f'{source} has {len(payload) - expected_offset} trailing payload bytes')

    return Checkpoint(
        backbone_config=config,
        tensors=tensors,
        num_classes=num_classes,
        adapter=adapter,
        task=task_name,
        task_seq_len=task_seq_len,
        task_seed=task_seed,
        seed=seed,
        format_version=version,
    )


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.info(f'✓ Saved checkpoint {path} ({len(ckpt.tensors)} tensors)')
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'Checkpoint not found: {path}')
    return decode_checkpoint(path.read_bytes(), source=str(path))


def checkpoint_from_model(
    model: TinyAttnModel,
    task: str = '',
    seed: int = 0,
    task_seq_len: int = 0,
    task_seed: int = 0,
) -> Checkpoint:
    adapter = None
    if model.adapters:
        first = model.adapters[0]
        adapter = {
            'num_heads': first.num_heads,
            'head_dim': first.head_dim,
            'with_biases': first.with_biases,
            'placement': model.placement.value,
            'merged_scale': [a.merged_scale for a in model.adapters],
        }
    return Checkpoint(
        backbone_config=model.backbone.config,
        tensors={name: t.data.copy() for name, t in model.named_tensors()},
        num_classes=model.num_classes,
        adapter=adapter,
        task=task,
        task_seq_len=task_seq_len,
        task_seed=task_seed,
        seed=seed,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> TinyAttnModel:
    """Rebuild the model: backbone frozen, adapters and decoder trainable.

    Raises:
        CheckpointError: If a tensor the model needs is missing, unexpected or
            of the wrong shape.
    """
    config = ckpt.backbone_config
    pending = dict(ckpt.tensors)

    def take(name: str, trainable: bool, shape=None) -> Tensor:
        try:
            data = pending.pop(name)
        except KeyError:
            raise CheckpointError(f'checkpoint is missing tensor {name}') from None
        if shape is not None and data.shape != tuple(shape):
            raise CheckpointError(f'checkpoint tensor {name} has shape {data.shape}, expected {tuple(shape)}')
        return Tensor(data, trainable=trainable)

    shapes = backbone_shapes(config)
    layer_fields = list(TransformerLayer.__dataclass_fields__)
    layers = [
        TransformerLayer(**{
            f: take(f'backbone.layers.{i}.{f}', False, shapes[f'layers.{i}.{f}']) for f in layer_fields
        })
        for i in range(config.num_layers)
    ]
    backbone = Backbone(
        config,
        take('backbone.token_embedding', False, shapes['token_embedding']),
        take('backbone.position_embedding', False, shapes['position_embedding']),
        layers,
    )

    adapters = None
    placement = Placement.NONE
    meta = ckpt.adapter
    if meta is not None:
        names = TinyAttnAdapter.PROJECTIONS + (TinyAttnAdapter.BIASES if meta['with_biases'] else ())
        try:
            adapters = [
                TinyAttnAdapter(**{n: take(f'adapters.{i}.{n}', True) for n in names},
                                merged_scale=meta['merged_scale'][i])
                for i in range(config.num_layers)
            ]
        except ValueError as e:
            raise CheckpointError(f'checkpoint adapters are malformed: {e}') from None
        if any(a.hidden != config.hidden or a.num_heads != meta['num_heads'] for a in adapters):
            raise CheckpointError('checkpoint adapter shapes disagree with the header')
        placement = Placement(meta['placement'])

    decoder = Decoder(
        weight=take('decoder.weight', True, (config.hidden, ckpt.num_classes)),
        bias=take('decoder.bias', True, (ckpt.num_classes,)),
    )
    if pending:
        raise CheckpointError(f"checkpoint has unexpected tensors: {', '.join(sorted(pending))}")
    return TinyAttnModel(backbone, decoder, adapters, placement)
