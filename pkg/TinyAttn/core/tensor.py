"""Dense float64 tensors and the reverse-mode computation tape.

A ``Tensor`` is a row-major float64 array with an optional gradient slot and a
``trainable`` flag. Differentiable ops (see ``core.ops``) append a ``TapeNode``
to the active ``ComputationTape`` whenever one of their inputs requires a
gradient; ``backward`` replays the tape in reverse.

Usage:
    tape = ComputationTape()
    with tape.recording():
        loss = ops.sum_all(ops.matmul(w, x))
    backward(tape, loss)
    w.grad  # d loss / d w
"""
import itertools
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

_tensor_ids = itertools.count()
_active_tape: ContextVar[Optional['ComputationTape']] = ContextVar('tinyattn_active_tape', default=None)


class Tensor:
    """Dense float64 array with an optional gradient."""

    __slots__ = ('data', 'grad', 'trainable', 'name', 'id', '_tracked')

    def __init__(self, data: Any, trainable: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.ndim and 0 in arr.shape:
            raise ValueError(f'Tensor dimensions must be positive, got shape {arr.shape}')
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.trainable = bool(trainable)
        self.name = name
        self.id = next(_tensor_ids)
        self._tracked = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """The underlying row-major array (not a copy)."""
        return self.data

    @property
    def requires_grad(self) -> bool:
        return self.trainable or self._tracked

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f' {self.name!r}' if self.name else ''
        flag = ', trainable' if self.trainable else ''
        return f'Tensor{label}(shape={self.shape}{flag})'


@dataclass
class TapeNode:
    """One recorded op: ids for auditing, references for the backward replay."""
    op: str
    input_ids: Tuple[int, ...]
    output_id: int
    saved: Dict[str, Any] = field(repr=False)
    inputs: Tuple[Tensor, ...] = field(repr=False)
    output: Tensor = field(repr=False)
    rule: Callable = field(repr=False)


class ComputationTape:
    """Ordered record of the differentiable ops executed while recording."""

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._produced: set = set()

    def __len__(self) -> int:
        return len(self.nodes)

    @contextmanager
    def recording(self):
        token = _active_tape.set(self)
        try:
            yield self
        finally:
            _active_tape.reset(token)

    def record(
        self,
        op: str,
        inputs: Tuple[Tensor, ...],
        output: Tensor,
        rule: Callable,
        saved: Dict[str, Any],
    ) -> TapeNode:
        for t in inputs:
            if t._tracked and t.id not in self._produced:
                raise ValueError(
                    f"Input {t!r} of '{op}' was produced under a different tape"
                )
        output._tracked = True
        node = TapeNode(
            op=op,
            input_ids=tuple(t.id for t in inputs),
            output_id=output.id,
            saved=saved,
            inputs=inputs,
            output=output,
            rule=rule,
        )
        self.nodes.append(node)
        self._produced.add(output.id)
        return node

    def trainable_leaves(self) -> Dict[int, Tensor]:
        leaves: Dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.trainable and not t._tracked:
                    leaves[t.id] = t
        return leaves


def active_tape() -> Optional[ComputationTape]:
    return _active_tape.get()


@contextmanager
def no_recording():
    """Run ops without writing to whichever tape is active."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def backward(tape: ComputationTape, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """Populate ``grad`` on every tensor on a path from a trainable leaf to ``loss``.

    Trainable leaves seen on the tape (and any extra ``params``) that the loss
    does not depend on get an all-zero gradient. Non-trainable leaves never
    receive a gradient.

    Raises:
        ValueError: If ``loss`` is not a scalar.
    """
    if loss.shape != ():
        raise ValueError(f'backward() needs a scalar loss, got shape {loss.shape}')

    grads: Dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        node.output.grad = g
        needs = tuple(t.requires_grad for t in node.inputs)
        if not any(needs):
            continue
        input_grads = node.rule(g, needs, node.inputs, node.output, node.saved)
        for t, need, gi in zip(node.inputs, needs, input_grads):
            if not need or gi is None:
                continue
            prev = grads.get(t.id)
            grads[t.id] = gi if prev is None else prev + gi

    leaves = tape.trainable_leaves()
    for p in params or ():
        if p.trainable:
            leaves[p.id] = p
    for tid, t in leaves.items():
        g = grads.get(tid)
        t.grad = g if g is not None else np.zeros_like(t.data)
