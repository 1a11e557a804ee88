"""AdamW with decoupled weight decay, and warmup + linear/cosine/constant learning-rate schedules."""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional

import numpy as np

from core.tensor import Tensor
from utils.errors import NumericError


class ScheduleKind(str, Enum):
    LINEAR = 'linear'
    COSINE = 'cosine'
    CONSTANT = 'constant'


@dataclass
class LrSchedule:
    kind: ScheduleKind
    warmup_steps: int
    total_steps: int
    base_lr: float

    def __post_init__(self):
        self.kind = ScheduleKind(self.kind)
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f'warmup_steps must lie in [0, total_steps={self.total_steps}], got {self.warmup_steps}'
            )

    @classmethod
    def from_fraction(cls, kind: str, warmup_fraction: float, total_steps: int, base_lr: float) -> 'LrSchedule':
        return cls(kind, int(round(warmup_fraction * total_steps)), total_steps, base_lr)


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at ``step``; steps past ``total_steps`` clamp to the final value."""
    step = min(max(step, 0), schedule.total_steps)
    base = schedule.base_lr
    warmup = schedule.warmup_steps
    if step < warmup:
        return base * step / warmup
    if schedule.kind is ScheduleKind.CONSTANT:
        return base
    span = schedule.total_steps - warmup
    if span == 0:
        return base
    progress = (step - warmup) / span
    if schedule.kind is ScheduleKind.LINEAR:
        return base * (schedule.total_steps - step) / span
    return base * (1.0 + math.cos(math.pi * progress)) / 2.0


@dataclass
class AdamWState:
    """Per-parameter moments plus the shared step counter."""
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def beta1(self) -> float:
        return self.betas[0]

    @property
    def beta2(self) -> float:
        return self.betas[1]


def adamw_step(
    state: AdamWState,
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    lr: float,
) -> AdamWState:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    Only the names in ``params`` are touched; non-trainable tensors are skipped.

    Raises:
        NumericError: If a gradient is not finite (the parameter is named).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError('non-finite gradient', parameter=name, step=state.step + 1)

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        if not p.trainable:
            continue
        g = grads[name]
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p.data)
            v = state.exp_avg_sq[name] = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        decay = lr * state.weight_decay * p.data
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps) + decay
    return state


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and total > max_norm > 0:
        factor = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= factor
    return total
