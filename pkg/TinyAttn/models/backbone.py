"""Toy pretrained-language-model stand-in.

Token + learned position embeddings feed L post-layer-norm transformer layers
(multi-head self-attention, then a GELU feed-forward net). Tiny-attention
adapters attach to each layer either sequentially (after LN1, before the FFN)
or in parallel with the pretrained attention. The decoder reads the top-layer
embedding of the CLS token at position 0.
"""
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core import ops
from core.tensor import ComputationTape, Tensor, active_tape, no_recording
from models.adapter import Placement, TinyAttnAdapter, adapter_forward

CLS_ID = 0
LN_EPS = 1e-5


@dataclass
class BackboneConfig:
    """Backbone shape: L layers of hidden size H with A heads, FFN width F."""
    num_layers: int = 2
    hidden: int = 32
    heads: int = 4
    ffn: int = 64
    vocab_size: int = 64
    max_len: int = 32

    def validate(self) -> 'BackboneConfig':
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f'BackboneConfig.{name} must be a positive integer, got {value!r}')
        if self.hidden % self.heads:
            raise ValueError(
                f'hidden size {self.hidden} is not divisible by {self.heads} attention heads'
            )
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class Batch:
    """Token ids (B x (T+1), CLS at position 0), labels, optional padding mask (True = real token)."""
    ids: np.ndarray
    labels: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]

    def subset(self, index: np.ndarray) -> 'Batch':
        mask = None if self.mask is None else self.mask[index]
        return Batch(self.ids[index], self.labels[index], mask)

    def validate(self, config: BackboneConfig) -> 'Batch':
        if self.ids.ndim != 2:
            raise ValueError(f'batch ids must be B x (T+1), got shape {self.ids.shape}')
        if self.labels.shape != (self.ids.shape[0],):
            raise ValueError(
                f'batch has {self.ids.shape[0]} sequences but labels shape {self.labels.shape}'
            )
        if self.seq_len > config.max_len:
            raise ValueError(f'sequence length {self.seq_len} exceeds max_len {config.max_len}')
        if self.ids.min() < 0 or self.ids.max() >= config.vocab_size:
            raise ValueError(f'token ids must lie in [0, {config.vocab_size})')
        if np.any(self.ids[:, 0] != CLS_ID):
            raise ValueError(f'position 0 must hold the CLS id {CLS_ID}')
        if self.mask is not None:
            if self.mask.shape != self.ids.shape:
                raise ValueError(f'mask shape {self.mask.shape} does not match ids {self.ids.shape}')
            if not self.mask[:, 0].all():
                raise ValueError('the CLS position cannot be masked')
        return self


@dataclass
class TransformerLayer:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @classmethod
    def initialize(cls, config: BackboneConfig, rng: np.random.Generator) -> 'TransformerLayer':
        h, f = config.hidden, config.ffn

        def weight(fan_in, fan_out):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))

        return cls(
            wq=weight(h, h), bq=Tensor(np.zeros(h)),
            wk=weight(h, h), bk=Tensor(np.zeros(h)),
            wv=weight(h, h), bv=Tensor(np.zeros(h)),
            wo=weight(h, h), bo=Tensor(np.zeros(h)),
            ln1_gamma=Tensor(np.ones(h)), ln1_beta=Tensor(np.zeros(h)),
            ffn_w1=weight(h, f), ffn_b1=Tensor(np.zeros(f)),
            ffn_w2=weight(f, h), ffn_b2=Tensor(np.zeros(h)),
            ln2_gamma=Tensor(np.ones(h)), ln2_beta=Tensor(np.zeros(h)),
        )

    def named_tensors(self) -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)


class Backbone:
    """Embeddings plus L frozen-able transformer layers."""

    def __init__(
        self,
        config: BackboneConfig,
        token_embedding: Tensor,
        position_embedding: Tensor,
        layers: List[TransformerLayer],
    ):
        self.config = config.validate()
        self.token_embedding = token_embedding
        self.position_embedding = position_embedding
        self.layers = layers

    @classmethod
    def initialize(cls, config: BackboneConfig, seed: int) -> 'Backbone':
        config.validate()
        rng = np.random.default_rng(seed)
        token = Tensor(rng.normal(0.0, 1.0, size=(config.vocab_size, config.hidden)))
        position = Tensor(rng.normal(0.0, 1.0, size=(config.max_len, config.hidden)))
        layers = [TransformerLayer.initialize(config, rng) for _ in range(config.num_layers)]
        return cls(config, token, position, layers)

    def named_tensors(self) -> Iterator[Tuple[str, Tensor]]:
        yield 'token_embedding', self.token_embedding
        yield 'position_embedding', self.position_embedding
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_tensors():
                yield f'layers.{i}.{name}', t


def set_trainable(backbone: Backbone, trainable: bool) -> Backbone:
    for _, t in backbone.named_tensors():
        t.trainable = trainable
        t.grad = None
    return backbone


def set_frozen(backbone: Backbone) -> Backbone:
    """Mark every backbone tensor (embeddings included) non-trainable. Idempotent."""
    return set_trainable(backbone, False)


def multi_head_attention(
    layer: TransformerLayer,
    x: Tensor,
    num_heads: int,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Scaled dot-product self-attention over B x T x H; masked keys get zero weight."""
    batch, seq, hidden = x.shape
    head_dim = hidden // num_heads

    def split_heads(t: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(t, (batch, seq, num_heads, head_dim)), (0, 2, 1, 3))

    q = split_heads(ops.add(ops.matmul(x, layer.wq), layer.bq))
    k = split_heads(ops.add(ops.matmul(x, layer.wk), layer.bk))
    v = split_heads(ops.add(ops.matmul(x, layer.wv), layer.bv))

    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    key_mask = None if mask is None else mask[:, None, None, :]
    weights = ops.softmax_rows(scores, key_mask)
    context = ops.matmul(weights, v)
    context = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, seq, hidden))
    return ops.add(ops.matmul(context, layer.wo), layer.bo)


def feed_forward(layer: TransformerLayer, x: Tensor) -> Tensor:
    hidden = ops.gelu(ops.add(ops.matmul(x, layer.ffn_w1), layer.ffn_b1))
    return ops.add(ops.matmul(hidden, layer.ffn_w2), layer.ffn_b2)


def embed(backbone: Backbone, ids: np.ndarray) -> Tensor:
    positions = np.arange(ids.shape[1])
    return ops.add(
        ops.embedding(backbone.token_embedding, ids),
        ops.embedding(backbone.position_embedding, positions),
    )


def backbone_forward(
    backbone: Backbone,
    batch: Batch,
    adapters: Optional[Sequence[TinyAttnAdapter]] = None,
    placement: Placement = Placement.NONE,
    tape: Optional[ComputationTape] = None,
    record: bool = True,
) -> Tuple[Tensor, ComputationTape]:
    """Run the backbone and return the top-layer CLS embedding (B x H) with its tape.

    With ``record=False`` nothing is written to the tape (pure evaluation).

    Per layer, with x the layer input and attn = MultiHeadAttn(x):
        sequential: z = LN1(x + attn); z' = z + Adapter(z); h = LN2(z' + FFN(z'))
        parallel:   z = LN1(x + attn + Adapter(x));        h = LN2(z + FFN(z))
        none:       z = LN1(x + attn);                     h = LN2(z + FFN(z))

    Raises:
        ValueError: On a malformed batch, a wrong number of adapters or an
            adapter whose hidden size differs from the backbone's.
    """
    config = backbone.config
    batch.validate(config)
    placement = Placement(placement)
    if placement is not Placement.NONE:
        if adapters is None or len(adapters) != config.num_layers:
            count = 0 if adapters is None else len(adapters)
            raise ValueError(
                f'{placement.value} placement needs one adapter per layer '
                f'({config.num_layers}), got {count}'
            )
        for i, adapter in enumerate(adapters):
            if adapter.hidden != config.hidden:
                raise ValueError(
                    f'adapter {i} has hidden size {adapter.hidden}, backbone has {config.hidden}'
                )

    if tape is None:
        tape = active_tape()
        if tape is None:
            tape = ComputationTape()
    with tape.recording() if record else no_recording():
        x = embed(backbone, batch.ids)
        for i, layer in enumerate(backbone.layers):
            attn = multi_head_attention(layer, x, config.heads, batch.mask)
            residual = ops.add(x, attn)
            if placement is Placement.PARALLEL:
                residual = ops.add(residual, adapter_forward(adapters[i], x, batch.mask))
            z = ops.layer_norm(residual, layer.ln1_gamma, layer.ln1_beta, LN_EPS)
            if placement is Placement.SEQUENTIAL:
                z = ops.add(z, adapter_forward(adapters[i], z, batch.mask))
            x = ops.layer_norm(ops.add(z, feed_forward(layer, z)), layer.ln2_gamma, layer.ln2_beta, LN_EPS)
        cls_embedding = ops.select(x, 0, axis=1)
    return cls_embedding, tape


@dataclass
class Decoder:
    """Task head: logits = cls @ weight + bias."""
    weight: Tensor
    bias: Tensor

    @classmethod
    def initialize(cls, hidden: int, num_classes: int, rng: np.random.Generator) -> 'Decoder':
        return cls(
            weight=Tensor(rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, num_classes)), trainable=True),
            bias=Tensor(np.zeros(num_classes), trainable=True),
        )

    @property
    def num_classes(self) -> int:
        return self.bias.shape[0]

    def named_tensors(self) -> Iterator[Tuple[str, Tensor]]:
        yield 'weight', self.weight
        yield 'bias', self.bias


def decode(cls_embedding: Tensor, decoder: Decoder) -> Tensor:
    """Affine map from B x H CLS embeddings to B x C class logits."""
    return ops.add(ops.matmul(cls_embedding, decoder.weight), decoder.bias)


def backbone_shapes(config: BackboneConfig) -> Dict[str, Tuple[int, ...]]:
    """Shape of every backbone tensor, keyed like ``Backbone.named_tensors``."""
    h, f = config.hidden, config.ffn
    layer = {
        'wq': (h, h), 'bq': (h,), 'wk': (h, h), 'bk': (h,),
        'wv': (h, h), 'bv': (h,), 'wo': (h, h), 'bo': (h,),
        'ln1_gamma': (h,), 'ln1_beta': (h,),
        'ffn_w1': (h, f), 'ffn_b1': (f,), 'ffn_w2': (f, h), 'ffn_b2': (h,),
        'ln2_gamma': (h,), 'ln2_beta': (h,),
    }
    shapes = {'token_embedding': (config.vocab_size, h), 'position_embedding': (config.max_len, h)}
    for i in range(config.num_layers):
        shapes.update({f'layers.{i}.{name}': shape for name, shape in layer.items()})
    return shapes


def count_backbone_params(config: BackboneConfig) -> int:
    """Embeddings plus L x (four H x H projections with biases, two layer norms, FFN)."""
    h, f = config.hidden, config.ffn
    per_layer = 4 * (h * h + h) + 2 * (2 * h) + (h * f + f) + (f * h + h)
    return (config.vocab_size + config.max_len) * h + config.num_layers * per_layer


def count_decoder_params(hidden: int, num_classes: int) -> int:
    return hidden * num_classes + num_classes
