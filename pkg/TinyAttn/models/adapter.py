"""Tiny-attention adapter.

An adapter holds M attention heads whose query/key/value vectors have a tiny
dimension D (1 by default). Head m reads z (B x T x H) and produces
z~^(m) in R^D per position; its output map O^(m) (stored H x D, head vector to
hidden) brings it back to H, and the adapter output is

    merged_scale * sum_m (O^(m) z~^(m) + b_O^(m))

After training, ``merge_heads`` averages every per-head parameter into a
single head and multiplies ``merged_scale`` by M, which reproduces the
M-head forward whose heads were all overwritten by those averages.

Per-head tensors are stacked on a leading head axis:
    wq, wk, wv, wo: M x H x D    bq, bk, bv: M x D    bo: M x H
"""
import math
from enum import Enum
from typing import Iterator, Optional, Tuple

import numpy as np

from core import ops
from core.tensor import Tensor
from utils.logger import setup_logger

logger = setup_logger(__name__)


class Placement(str, Enum):
    NONE = 'none'
    SEQUENTIAL = 'sequential'
    PARALLEL = 'parallel'


class TinyAttnAdapter:
    """M tiny attention heads plus their per-head output projections."""

    PROJECTIONS = ('wq', 'wk', 'wv', 'wo')
    BIASES = ('bq', 'bk', 'bv', 'bo')

    def __init__(
        self,
        wq: Tensor,
        wk: Tensor,
        wv: Tensor,
        wo: Tensor,
        bq: Optional[Tensor] = None,
        bk: Optional[Tensor] = None,
        bv: Optional[Tensor] = None,
        bo: Optional[Tensor] = None,
        merged_scale: float = 1.0,
    ):
        self.wq, self.wk, self.wv, self.wo = wq, wk, wv, wo
        self.bq, self.bk, self.bv, self.bo = bq, bk, bv, bo
        self.merged_scale = float(merged_scale)
        self._check_shapes()

    @classmethod
    def zeros(cls, hidden: int, num_heads: int = 1, head_dim: int = 1, with_biases: bool = True) -> 'TinyAttnAdapter':
        if hidden < 1 or num_heads < 1 or head_dim < 1:
            raise ValueError(
                f'adapter dimensions must be positive: H={hidden}, M={num_heads}, D={head_dim}'
            )

        def param(*shape):
            return Tensor(np.zeros(shape), trainable=True)

        biases = {}
        if with_biases:
            biases = dict(
                bq=param(num_heads, head_dim),
                bk=param(num_heads, head_dim),
                bv=param(num_heads, head_dim),
                bo=param(num_heads, hidden),
            )
        return cls(
            wq=param(num_heads, hidden, head_dim),
            wk=param(num_heads, hidden, head_dim),
            wv=param(num_heads, hidden, head_dim),
            wo=param(num_heads, hidden, head_dim),
            **biases,
        )

    def _check_shapes(self) -> None:
        expected = self.wq.shape
        if len(expected) != 3:
            raise ValueError(f'adapter projections must be M x H x D, got {expected}')
        for name in self.PROJECTIONS:
            shape = getattr(self, name).shape
            if shape != expected:
                raise ValueError(f'adapter {name} has shape {shape}, expected {expected}')
        present = [getattr(self, name) is not None for name in self.BIASES]
        if any(present) and not all(present):
            raise ValueError('adapter biases must be all present or all absent')
        if self.with_biases:
            m, h, d = expected
            for name, shape in (('bq', (m, d)), ('bk', (m, d)), ('bv', (m, d)), ('bo', (m, h))):
                if getattr(self, name).shape != shape:
                    raise ValueError(
                        f'adapter {name} has shape {getattr(self, name).shape}, expected {shape}'
                    )

    @property
    def num_heads(self) -> int:
        return self.wq.shape[0]

    @property
    def hidden(self) -> int:
        return self.wq.shape[1]

    @property
    def head_dim(self) -> int:
        return self.wq.shape[2]

    @property
    def with_biases(self) -> bool:
        return self.bq is not None

    def named_tensors(self) -> Iterator[Tuple[str, Tensor]]:
        for name in self.PROJECTIONS:
            yield name, getattr(self, name)
        if self.with_biases:
            for name in self.BIASES:
                yield name, getattr(self, name)

    def __repr__(self) -> str:
        return (
            f'TinyAttnAdapter(M={self.num_heads}, D={self.head_dim}, H={self.hidden}, '
            f'biases={self.with_biases}, merged_scale={self.merged_scale:g})'
        )


def adapter_forward(adapter: TinyAttnAdapter, z: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Contextual modification of z (B x T x H); masked positions are never attended to.

    Raises:
        ValueError: If the hidden size or the mask shape does not match ``z``.
    """
    if z.ndim != 3 or z.shape[-1] != adapter.hidden:
        raise ValueError(f'adapter expects B x T x {adapter.hidden} input, got {z.shape}')
    batch, seq, hidden = z.shape
    if mask is not None and np.shape(mask) != (batch, seq):
        raise ValueError(f'adapter mask shape {np.shape(mask)} does not match input {(batch, seq)}')
    m, d = adapter.num_heads, adapter.head_dim

    zh = ops.reshape(z, (batch, 1, seq, hidden))

    def project(weight: Tensor, bias: Optional[Tensor]) -> Tensor:
        out = ops.matmul(zh, weight)  # B x M x T x D
        if bias is not None:
            out = ops.add(out, ops.reshape(bias, (m, 1, d)))
        return out

    q = project(adapter.wq, adapter.bq)
    k = project(adapter.wk, adapter.bk)
    v = project(adapter.wv, adapter.bv)

    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    key_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]
    weights = ops.softmax_rows(scores, key_mask)
    heads = ops.matmul(weights, v)  # B x M x T x D

    out = ops.matmul(heads, ops.transpose(adapter.wo, (0, 2, 1)))  # B x M x T x H
    if adapter.bo is not None:
        out = ops.add(out, ops.reshape(adapter.bo, (m, 1, hidden)))
    return ops.scale(ops.sum(out, axis=1), adapter.merged_scale)


def _averaged(adapter: TinyAttnAdapter, repeat: int) -> dict:
    params = {}
    for name, t in adapter.named_tensors():
        mean = t.data.mean(axis=0, keepdims=True)
        params[name] = Tensor(np.repeat(mean, repeat, axis=0), trainable=t.trainable)
    return params


def merge_heads(adapter: TinyAttnAdapter) -> TinyAttnAdapter:
    """Average every per-head parameter into one head carrying merged_scale * M."""
    merged = TinyAttnAdapter(
        **_averaged(adapter, repeat=1),
        merged_scale=adapter.merged_scale * adapter.num_heads,
    )
    logger.debug(f'merged {adapter!r} into {merged!r}')
    return merged


def average_heads(adapter: TinyAttnAdapter) -> TinyAttnAdapter:
    """Keep all M heads but overwrite each with the head-averaged parameters."""
    return TinyAttnAdapter(**_averaged(adapter, repeat=adapter.num_heads), merged_scale=adapter.merged_scale)


def init_single_head(adapter: TinyAttnAdapter, rng: np.random.Generator, scale: float = 0.01) -> TinyAttnAdapter:
    """Near-identity start: tiny output projections, U(+-1/sqrt(H)) attention weights, zero biases.

    Raises:
        ValueError: If the adapter has more than one head.
    """
    if adapter.num_heads != 1:
        raise ValueError(f'init_single_head needs a 1-head adapter, got M={adapter.num_heads}')
    return init_independent_heads(adapter, rng, scale)


def init_independent_heads(adapter: TinyAttnAdapter, rng: np.random.Generator, scale: float = 0.01) -> TinyAttnAdapter:
    """Draw every head from the single-head initialisation distributions."""
    h, d = adapter.hidden, adapter.head_dim
    bound = 1.0 / math.sqrt(h)
    for name in ('wq', 'wk', 'wv'):
        t = getattr(adapter, name)
        t.data[...] = rng.uniform(-bound, bound, size=t.shape)
    out_bound = scale / math.sqrt(d)
    adapter.wo.data[...] = rng.uniform(-out_bound, out_bound, size=adapter.wo.shape)
    if adapter.with_biases:
        for name in TinyAttnAdapter.BIASES:
            getattr(adapter, name).data[...] = 0.0
    adapter.merged_scale = 1.0
    return adapter


def init_from_single(
    single: TinyAttnAdapter,
    num_heads: int,
    rng: np.random.Generator,
    eps: float = 1e-3,
) -> TinyAttnAdapter:
    """Build an M-head adapter whose heads are perturbed copies of a trained single head.

    Every parameter gets U(-eps, eps) noise; output projections (and output
    biases) are then scaled by merged_scale / M so the initial forward matches
    the single-head forward up to O(eps).

    Raises:
        ValueError: If ``single`` has more than one head or ``num_heads`` < 1.
    """
    if single.num_heads != 1:
        raise ValueError(f'init_from_single needs a 1-head adapter, got M={single.num_heads}')
    if num_heads < 1:
        raise ValueError(f'num_heads must be >= 1, got {num_heads}')
    out_factor = single.merged_scale / num_heads
    params = {}
    for name, t in single.named_tensors():
        data = np.repeat(t.data, num_heads, axis=0)
        if eps > 0:
            data = data + rng.uniform(-eps, eps, size=data.shape)
        if name in ('wo', 'bo'):
            data = data * out_factor
        params[name] = Tensor(data, trainable=True)
    return TinyAttnAdapter(**params, merged_scale=1.0)


def count_adapter_params(num_layers: int, hidden: int, num_heads: int, head_dim: int, with_biases: bool) -> int:
    """4*L*M*H*D projection weights, plus L*M*(3*D + H) when biases are on."""
    for name, value in (('L', num_layers), ('H', hidden), ('M', num_heads), ('D', head_dim)):
        if value < 1:
            raise ValueError(f'{name} must be positive, got {value}')
    count = num_layers * num_heads * (3 * hidden * head_dim + head_dim * hidden)
    if with_biases:
        count += num_layers * num_heads * (3 * head_dim + hidden)
    return count
