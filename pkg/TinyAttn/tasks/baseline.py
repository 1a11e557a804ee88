"""Position-free reference model: logistic regression on token counts.

Any task it solves well needs no cross-position information, so it is the
yardstick for how contextual match-pair and first-last really are.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core import ops
from core.tensor import ComputationTape, Tensor, backward
from models.backbone import CLS_ID, Batch
from tasks.synthetic import TaskSpec, make_split
from training.optim import AdamWState, adamw_step
from utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass
class BaselineConfig:
    train_size: int = 2048
    val_size: int = 512
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    weight_decay: float = 0.0
    seed: int = 0


def bag_of_tokens(batch: Batch, vocab_size: int) -> np.ndarray:
    """B x V token counts of the payload (CLS dropped)."""
    ids = batch.ids[:, 1:] if np.all(batch.ids[:, 0] == CLS_ID) else batch.ids
    rows = np.repeat(np.arange(ids.shape[0]), ids.shape[1])
    counts = np.zeros((ids.shape[0], vocab_size))
    np.add.at(counts, (rows, ids.reshape(-1)), 1.0)
    return counts


def bag_of_tokens_baseline(task: TaskSpec, config: Optional[BaselineConfig] = None) -> float:
    """Train softmax regression on token counts and return validation accuracy."""
    config = config or BaselineConfig()
    rng = np.random.default_rng(config.seed)
    train_set = make_split(task, 'train', config.train_size)
    val_set = make_split(task, 'validation', config.val_size)
    x_train = bag_of_tokens(train_set, task.vocab_size) / task.seq_len
    x_val = bag_of_tokens(val_set, task.vocab_size) / task.seq_len

    weight = Tensor(rng.normal(0.0, 1.0 / math.sqrt(task.vocab_size), size=(task.vocab_size, task.num_classes)),
                    trainable=True, name='weight')
    bias = Tensor(np.zeros(task.num_classes), trainable=True, name='bias')
    params = {'weight': weight, 'bias': bias}
    state = AdamWState(weight_decay=config.weight_decay)

    per_epoch = max(1, len(train_set) // config.batch_size)
    for _ in range(config.epochs):
        order = rng.permutation(len(train_set))
        for b in range(per_epoch):
            index = order[b * config.batch_size:(b + 1) * config.batch_size]
            tape = ComputationTape()
            with tape.recording():
                logits = ops.add(ops.matmul(Tensor(x_train[index]), weight), bias)
                loss = ops.cross_entropy(logits, train_set.labels[index])
            backward(tape, loss, params=params.values())
            adamw_step(state, params, {n: p.grad for n, p in params.items()}, config.lr)

    preds = (x_val @ weight.data + bias.data).argmax(axis=1)
    accuracy = float(np.mean(preds == val_set.labels))
    logger.info(f'bag-of-tokens baseline on {task.name}: val_acc {accuracy:.4f}')
    return accuracy
