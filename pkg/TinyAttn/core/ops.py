"""Differentiable operations over ``Tensor``.

Each forward function computes its result with numpy and, when a tape is
recording and some input requires a gradient, records itself together with
the intermediates its backward rule needs. Backward rules live in
``BACKWARD_RULES`` keyed by op id and share one signature:

    rule(g, needs, inputs, output, saved) -> tuple of input gradients

``needs[i]`` is False for inputs that do not require a gradient; rules skip
that work and return None in that slot.
"""
import math
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from core.tensor import Tensor, active_tape

BACKWARD_RULES: Dict[str, Callable] = {}

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def backward_rule(op: str):
    def register(fn: Callable) -> Callable:
        BACKWARD_RULES[op] = fn
        return fn
    return register


def _emit(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], **saved) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, out, BACKWARD_RULES[op], saved)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes numpy broadcast to reach it from ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, numpy batch broadcasting on the rest.

    Raises:
        ValueError: If either operand has fewer than two axes or the inner
            dimensions disagree.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f'matmul needs matrices, got shapes {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f'matmul inner dimensions disagree: {a.shape} x {b.shape}'
        )
    return _emit('matmul', np.matmul(a.data, b.data), (a, b))


@backward_rule('matmul')
def _matmul_backward(g, needs, inputs, output, saved):
    a, b = inputs
    da = db = None
    if needs[0]:
        da = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
    if needs[1]:
        db = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
    return da, db


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _emit('add', a.data + b.data, (a, b))


@backward_rule('add')
def _add_backward(g, needs, inputs, output, saved):
    a, b = inputs
    return (
        _unbroadcast(g, a.shape) if needs[0] else None,
        _unbroadcast(g, b.shape) if needs[1] else None,
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _emit('mul', a.data * b.data, (a, b))


@backward_rule('mul')
def _mul_backward(g, needs, inputs, output, saved):
    a, b = inputs
    return (
        _unbroadcast(g * b.data, a.shape) if needs[0] else None,
        _unbroadcast(g * a.data, b.shape) if needs[1] else None,
    )


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant that is not itself differentiated."""
    factor = float(factor)
    return _emit('scale', x.data * factor, (x,), factor=factor)


@backward_rule('scale')
def _scale_backward(g, needs, inputs, output, saved):
    return (g * saved['factor'],)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    u = _GELU_C * (x.data + _GELU_A * x.data ** 3)
    t = np.tanh(u)
    return _emit('gelu', 0.5 * x.data * (1.0 + t), (x,), tanh=t)


@backward_rule('gelu')
def _gelu_backward(g, needs, inputs, output, saved):
    x = inputs[0].data
    t = saved['tanh']
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    return _emit('transpose', np.transpose(x.data, axes), (x,), axes=axes)


@backward_rule('transpose')
def _transpose_backward(g, needs, inputs, output, saved):
    return (np.transpose(g, np.argsort(saved['axes'])),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit('reshape', x.data.reshape(tuple(shape)), (x,))


@backward_rule('reshape')
def _reshape_backward(g, needs, inputs, output, saved):
    return (g.reshape(inputs[0].shape),)


def select(x: Tensor, index: int, axis: int) -> Tensor:
    """Pick one slice along ``axis`` (the axis is dropped), e.g. position 0 of a sequence."""
    axis = axis % x.ndim
    return _emit('select', np.take(x.data, index, axis=axis), (x,), index=index, axis=axis)


@backward_rule('select')
def _select_backward(g, needs, inputs, output, saved):
    x = inputs[0]
    dx = np.zeros_like(x.data)
    idx = [slice(None)] * x.ndim
    idx[saved['axis']] = saved['index']
    dx[tuple(idx)] = g
    return (dx,)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (V x H) for an integer id array of any shape."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f'embedding ids must be integers, got dtype {ids.dtype}')
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f'embedding ids must lie in [0, {table.shape[0]}), got range '
            f'[{ids.min()}, {ids.max()}]'
        )
    return _emit('embedding', table.data[ids], (table,), ids=ids)


@backward_rule('embedding')
def _embedding_backward(g, needs, inputs, output, saved):
    table = inputs[0]
    dt = np.zeros_like(table.data)
    np.add.at(dt, saved['ids'].reshape(-1), g.reshape(-1, table.shape[-1]))
    return (dt,)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    return _emit('sum', np.sum(x.data, axis=axis, keepdims=keepdims), (x,), axis=axis, keepdims=keepdims)


@backward_rule('sum')
def _sum_backward(g, needs, inputs, output, saved):
    x = inputs[0]
    axis = saved['axis']
    if axis is not None and not saved['keepdims']:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def sum_all(x: Tensor) -> Tensor:
    return sum(x)


# ---------------------------------------------------------------------------
# Normalisations and losses
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis with per-row max subtraction.

    ``mask`` (boolean, broadcastable to ``x``) marks the entries that take part;
    excluded entries get exactly zero weight. Every row must keep at least one
    entry.
    """
    logits = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        if not mask.any(axis=-1).all():
            raise ValueError('softmax_rows: every row needs at least one unmasked entry')
        logits = np.where(mask, logits, -np.inf)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit('softmax_rows', y, (x,))


@backward_rule('softmax_rows')
def _softmax_backward(g, needs, inputs, output, saved):
    y = output.data
    return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (biased variance), then apply gamma/beta."""
    if x.shape[-1] != gamma.shape[-1] or gamma.shape != beta.shape:
        raise ValueError(
            f'layer_norm shape mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}'
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat * gamma.data + beta.data
    return _emit('layer_norm', y, (x, gamma, beta), xhat=xhat, inv_std=inv_std)


@backward_rule('layer_norm')
def _layer_norm_backward(g, needs, inputs, output, saved):
    x, gamma, beta = inputs
    xhat, inv_std = saved['xhat'], saved['inv_std']
    dx = dgamma = dbeta = None
    if needs[0]:
        n = x.shape[-1]
        dxhat = g * gamma.data
        dx = inv_std / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
        )
    if needs[1]:
        dgamma = _unbroadcast(g * xhat, gamma.shape)
    if needs[2]:
        dbeta = _unbroadcast(g, beta.shape)
    return dx, dgamma, dbeta


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-softmax probability of the true class.

    Raises:
        ValueError: If labels are not integers in [0, C) or the batch sizes differ.
    """
    if logits.ndim != 2:
        raise ValueError(f'cross_entropy needs B x C logits, got shape {logits.shape}')
    labels = np.asarray(labels)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f'cross_entropy: labels shape {labels.shape} does not match batch of {batch}')
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f'cross_entropy labels must be integers, got dtype {labels.dtype}')
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(
            f'cross_entropy labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]'
        )
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()
    return _emit('cross_entropy', np.asarray(loss), (logits,), log_probs=log_probs, labels=labels)


@backward_rule('cross_entropy')
def _cross_entropy_backward(g, needs, inputs, output, saved):
    log_probs, labels = saved['log_probs'], saved['labels']
    batch = log_probs.shape[0]
    d = np.exp(log_probs)
    d[np.arange(batch), labels] -= 1.0
    return (d * (g / batch),)
