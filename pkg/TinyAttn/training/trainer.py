"""Training loop: AdamW over exactly the trainable tensors, evaluated twice per epoch."""
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Union

import numpy as np

from core.tensor import backward
from models.model import TinyAttnModel
from tasks.synthetic import TaskSpec, make_split
from training.optim import AdamWState, LrSchedule, ScheduleKind, adamw_step, clip_grad_norm, lr_at
from utils.errors import ConfigError, NumericError
from utils.logger import setup_logger

logger = setup_logger(__name__)


class TrainMode(str, Enum):
    ADAPTER_TUNE = 'adapter_tune'
    FULL_FINETUNE = 'full_finetune'


@dataclass
class TrainerConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    schedule: str = 'linear'
    warmup_fraction: float = 0.1
    mode: str = 'adapter_tune'
    seed: int = 0
    train_size: int = 2048
    val_size: int = 512
    grad_clip: Optional[float] = None

    def validate(self) -> 'TrainerConfig':
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError(f'trainer.warmup_fraction must lie in [0, 1], got {self.warmup_fraction}')
        for name in ('epochs', 'batch_size', 'train_size', 'val_size'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f'trainer.{name} must be a positive integer, got {value!r}')
        if self.lr <= 0:
            raise ConfigError(f'trainer.lr must be positive, got {self.lr}')
        if self.weight_decay < 0:
            raise ConfigError(f'trainer.weight_decay must be >= 0, got {self.weight_decay}')
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f'trainer.grad_clip must be positive when set, got {self.grad_clip}')
        try:
            ScheduleKind(self.schedule)
            TrainMode(self.mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.steps_per_epoch < 2:
            raise ConfigError(
                f'need at least 2 batches per epoch to evaluate twice, got '
                f'train_size={self.train_size} with batch_size={self.batch_size}'
            )
        return self

    @property
    def steps_per_epoch(self) -> int:
        return self.train_size // self.batch_size


@dataclass
class EvalRecord:
    step: int
    epoch: float
    lr: float
    train_loss: float
    val_accuracy: float


@dataclass
class TrainReport:
    task: str
    mode: str
    records: List[EvalRecord] = field(default_factory=list)
    best_score: float = float('-inf')
    best_step: int = 0
    best_epoch: float = 0.0
    wall_clock_s: float = 0.0
    param_counts: Dict[str, Union[int, float]] = field(default_factory=dict)

    def add(self, record: EvalRecord) -> None:
        self.records.append(record)
        if record.val_accuracy > self.best_score:
            self.best_score = record.val_accuracy
            self.best_step = record.step
            self.best_epoch = record.epoch

    def summary(self) -> dict:
        return {
            'task': self.task,
            'mode': self.mode,
            'best_score': self.best_score,
            'best_step': self.best_step,
            'best_epoch': self.best_epoch,
            'num_evals': len(self.records),
            'param_counts': dict(self.param_counts),
            'wall_clock_s': self.wall_clock_s,
        }

    def eval_dicts(self) -> List[dict]:
        return [asdict(r) for r in self.records]


def _prepare_mode(model: TinyAttnModel, mode: TrainMode) -> None:
    if mode is TrainMode.FULL_FINETUNE:
        model.unfreeze_backbone()
        return
    trainable = [name for name, t in model.backbone.named_tensors() if t.trainable]
    if trainable:
        raise ConfigError(
            f'adapter_tune needs a frozen backbone, but {len(trainable)} backbone tensors '
            f'are trainable (first: {trainable[0]})'
        )


def train(model: TinyAttnModel, task: TaskSpec, config: TrainerConfig) -> TrainReport:
    """Train ``model`` on ``task`` and evaluate on the validation split twice per epoch.

    Evaluations happen after the middle batch and after the last batch of each
    epoch, so an E-epoch run yields 2E records with strictly increasing steps.
    The batch order is reshuffled every epoch from ``config.seed``.

    Args:
        model: Classifier whose decoder matches ``task.num_classes``.
        task: Task to draw the train and validation splits from.
        config: Optimisation settings.

    Returns:
        TrainReport with every evaluation, the best validation accuracy and
        the step it occurred at.

    Raises:
        ConfigError: On an invalid config, a class-count mismatch, or
            adapter_tune on an unfrozen backbone.
        NumericError: If the training loss stops being finite.
    """
    config.validate()
    mode = TrainMode(config.mode)
    if model.num_classes != task.num_classes:
        raise ConfigError(
            f'decoder has {model.num_classes} classes but task {task.name} has {task.num_classes}'
        )
    _prepare_mode(model, mode)

    train_set = make_split(task, 'train', config.train_size)
    val_set = make_split(task, 'validation', config.val_size)
    per_epoch = config.steps_per_epoch
    eval_after = {math.ceil(per_epoch / 2): 0.5, per_epoch: 1.0}
    schedule = LrSchedule.from_fraction(config.schedule, config.warmup_fraction, config.epochs * per_epoch, config.lr)
    state = AdamWState(weight_decay=config.weight_decay)
    params = model.trainable_parameters()
    shuffle_rng = np.random.default_rng(config.seed)

    report = TrainReport(task=task.name, mode=mode.value, param_counts=model.param_report())
    logger.info(
        f'Training {task.name} ({mode.value}): {config.epochs} epochs x {per_epoch} steps, '
        f"{report.param_counts['total']:,} trainable parameters"
    )
    started = time.perf_counter()
    step = 0
    losses: List[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_set))
        for b in range(per_epoch):
            batch = train_set.subset(order[b * config.batch_size:(b + 1) * config.batch_size])
            lr = lr_at(schedule, step)
            loss, tape = model.loss(batch)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError('training loss diverged', step=step + 1, epoch=epoch + 1, lr=lr, loss=value)
            backward(tape, loss, params=params.values())
            grads = {name: p.grad for name, p in params.items()}
            if config.grad_clip is not None:
                clip_grad_norm(grads, config.grad_clip)
            adamw_step(state, params, grads, lr)
            step += 1
            losses.append(value)

            if b + 1 in eval_after:
                record = EvalRecord(
                    step=step,
                    epoch=epoch + eval_after[b + 1],
                    lr=lr,
                    train_loss=float(np.mean(losses)),
                    val_accuracy=model.accuracy(val_set),
                )
                losses = []
                report.add(record)
                logger.info(
                    f'step {record.step} epoch {record.epoch:g} lr {record.lr:.3e} '
                    f'loss {record.train_loss:.4f} val_acc {record.val_accuracy:.4f}'
                )

    report.wall_clock_s = time.perf_counter() - started
    logger.info(f'✓ {task.name}: best val_acc {report.best_score:.4f} at step {report.best_step}')
    return report
