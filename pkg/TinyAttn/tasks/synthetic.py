"""Deterministic synthetic sequence-classification tasks.

Every example is ``[CLS] + T payload tokens``; payload ids lie in [1, V).
Tokens are grouped into P contiguous vocabulary partitions, token t belonging
to partition floor(t * P / V).

Built-in rules:
    pretrain-nextset  which of 4 partitions holds the majority of tokens (C=4)
    majority          which of 2 partitions holds more tokens (C=2, ties -> 0)
    match-pair        does some value occur at two distinct positions (C=2)
    first-last        do the first and last payload tokens share a partition (C=2)

Generators draw the label uniformly first and then build a sequence with that
label, so classes stay balanced. ``(spec, split, index)`` fully determines a draw.
"""
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Sequence

import numpy as np
import pandas as pd

from models.backbone import CLS_ID, Batch
from utils.file_utils import atomic_write_text
from utils.logger import setup_logger

logger = setup_logger(__name__)


class LabelRule(str, Enum):
    PRETRAIN_NEXTSET = 'pretrain-nextset'
    MAJORITY = 'majority'
    MATCH_PAIR = 'match-pair'
    FIRST_LAST = 'first-last'


RULE_CLASSES = {
    LabelRule.PRETRAIN_NEXTSET: 4,
    LabelRule.MAJORITY: 2,
    LabelRule.MATCH_PAIR: 2,
    LabelRule.FIRST_LAST: 2,
}

RULE_PARTITIONS = {
    LabelRule.PRETRAIN_NEXTSET: 4,
    LabelRule.MAJORITY: 2,
    LabelRule.MATCH_PAIR: 1,
    LabelRule.FIRST_LAST: 2,
}

SPLIT_CODES = {'train': 0, 'validation': 1, 'test': 2}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    rule: LabelRule
    vocab_size: int = 64
    seq_len: int = 16
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'rule', LabelRule(self.rule))
        if self.num_classes != RULE_CLASSES[self.rule]:
            raise ValueError(
                f'{self.rule.value} has {RULE_CLASSES[self.rule]} classes, got num_classes={self.num_classes}'
            )
        if self.seq_len < 2:
            raise ValueError(f'seq_len must be >= 2, got {self.seq_len}')
        if self.vocab_size - 1 < max(self.num_partitions, 2):
            raise ValueError(f'vocab_size {self.vocab_size} is too small for {self.rule.value}')
        if self.rule is LabelRule.MATCH_PAIR and self.seq_len > self.vocab_size - 1:
            raise ValueError(
                f'match-pair needs seq_len <= vocab_size - 1 for all-distinct negatives, '
                f'got T={self.seq_len}, V={self.vocab_size}'
            )

    @property
    def num_partitions(self) -> int:
        return RULE_PARTITIONS[self.rule]

    def payload_vocab(self) -> np.ndarray:
        return np.arange(1, self.vocab_size)

    def partition_tokens(self, part: int) -> np.ndarray:
        vocab = self.payload_vocab()
        return vocab[partition_of(vocab, self.num_partitions, self.vocab_size) == part]


def get_task(name: str, seed: int = 0, vocab_size: int = 64, seq_len: int = 16) -> TaskSpec:
    """Look up a built-in task by rule name."""
    try:
        rule = LabelRule(name)
    except ValueError:
        known = ', '.join(r.value for r in LabelRule)
        raise ValueError(f"Unknown task '{name}'. Built-in tasks: {known}") from None
    return TaskSpec(name=name, rule=rule, vocab_size=vocab_size, seq_len=seq_len,
                    num_classes=RULE_CLASSES[rule], seed=seed)


def partition_of(tokens: np.ndarray, num_partitions: int, vocab_size: int) -> np.ndarray:
    return np.asarray(tokens) * num_partitions // vocab_size


# ---------------------------------------------------------------------------
# Label oracles
# ---------------------------------------------------------------------------

def _majority_label(spec: TaskSpec, tokens: np.ndarray) -> int:
    counts = np.bincount(partition_of(tokens, spec.num_partitions, spec.vocab_size),
                         minlength=spec.num_partitions)
    return int(np.argmax(counts))


def _match_pair_label(spec: TaskSpec, tokens: np.ndarray) -> int:
    return int(np.unique(tokens).size < tokens.size)


def _first_last_label(spec: TaskSpec, tokens: np.ndarray) -> int:
    parts = partition_of(tokens[[0, -1]], spec.num_partitions, spec.vocab_size)
    return int(parts[0] == parts[1])


_ORACLES: Dict[LabelRule, Callable[[TaskSpec, np.ndarray], int]] = {
    LabelRule.PRETRAIN_NEXTSET: _majority_label,
    LabelRule.MAJORITY: _majority_label,
    LabelRule.MATCH_PAIR: _match_pair_label,
    LabelRule.FIRST_LAST: _first_last_label,
}


def oracle_label(spec: TaskSpec, tokens: Sequence[int]) -> int:
    """Class id of a payload sequence (CLS excluded).

    Raises:
        ValueError: If the rule is unknown or a token lies outside [1, V).
    """
    rule = LabelRule(spec.rule)
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError(f'payload must be a non-empty 1-D token sequence, got shape {tokens.shape}')
    if tokens.min() < 1 or tokens.max() >= spec.vocab_size:
        raise ValueError(f'payload tokens must lie in [1, {spec.vocab_size})')
    return _ORACLES[rule](spec, tokens)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _gen_majority(spec: TaskSpec, rng: np.random.Generator, label: int) -> np.ndarray:
    t = spec.seq_len
    k = int(rng.integers(t // 2 + 1, t + 1))
    inside = spec.partition_tokens(label)
    vocab = spec.payload_vocab()
    outside = vocab[partition_of(vocab, spec.num_partitions, spec.vocab_size) != label]
    tokens = np.concatenate([rng.choice(inside, k), rng.choice(outside, t - k)])
    return rng.permutation(tokens)


def _gen_match_pair(spec: TaskSpec, rng: np.random.Generator, label: int) -> np.ndarray:
    vocab = spec.payload_vocab()
    t = spec.seq_len
    if label == 0:
        return rng.choice(vocab, t, replace=False)
    base = rng.choice(vocab, t - 1, replace=False)
    duplicate = base[rng.integers(t - 1)]
    return np.insert(base, int(rng.integers(t)), duplicate)


def _gen_first_last(spec: TaskSpec, rng: np.random.Generator, label: int) -> np.ndarray:
    vocab = spec.payload_vocab()
    first = rng.choice(vocab)
    part = int(partition_of(first, spec.num_partitions, spec.vocab_size))
    last_part = part if label == 1 else 1 - part
    last = rng.choice(spec.partition_tokens(last_part))
    middle = rng.choice(vocab, spec.seq_len - 2)
    return np.concatenate([[first], middle, [last]])


_GENERATORS = {
    LabelRule.PRETRAIN_NEXTSET: _gen_majority,
    LabelRule.MAJORITY: _gen_majority,
    LabelRule.MATCH_PAIR: _gen_match_pair,
    LabelRule.FIRST_LAST: _gen_first_last,
}


def generate_batch(spec: TaskSpec, rng: np.random.Generator, batch_size: int) -> Batch:
    """Draw ``batch_size`` labelled sequences with CLS prepended."""
    if batch_size < 1:
        raise ValueError(f'batch_size must be >= 1, got {batch_size}')
    generator = _GENERATORS[spec.rule]
    ids = np.empty((batch_size, spec.seq_len + 1), dtype=np.int64)
    labels = rng.integers(spec.num_classes, size=batch_size)
    ids[:, 0] = CLS_ID
    for i, label in enumerate(labels):
        ids[i, 1:] = generator(spec, rng, int(label))
    return Batch(ids, labels)


def draw_batch(spec: TaskSpec, index: int, batch_size: int, split: str = 'train') -> Batch:
    """Reproducible draw keyed by (spec.seed, split, index)."""
    if split not in SPLIT_CODES:
        raise ValueError(f"Unknown split '{split}'. Use one of: {', '.join(SPLIT_CODES)}")
    rng = np.random.default_rng([spec.seed, SPLIT_CODES[split], index])
    return generate_batch(spec, rng, batch_size)


def make_split(spec: TaskSpec, split: str, size: int) -> Batch:
    return draw_batch(spec, 0, size, split)


# ---------------------------------------------------------------------------
# Line-delimited corpus format: "<space-separated ids>\t<label>" per line
# ---------------------------------------------------------------------------

def write_corpus(batch: Batch, path: Path) -> Path:
    frame = pd.DataFrame({
        'ids': [' '.join(str(i) for i in row) for row in batch.ids],
        'label': batch.labels,
    })
    text = frame.to_csv(sep='\t', header=False, index=False, lineterminator='\n')
    atomic_write_text(Path(path), text)
    return Path(path)


def export_corpus(spec: TaskSpec, split: str, size: int, path: Path) -> Path:
    """Write the first ``size`` examples of a split in the line-delimited corpus format."""
    written = write_corpus(make_split(spec, split, size), path)
    logger.info(f"✓ Exported {size} {spec.name} {split} examples to {written}")
    return written


def load_corpus(path: Path) -> Batch:
    frame = pd.read_csv(path, sep='\t', header=None, names=['ids', 'label'], dtype={'ids': str, 'label': np.int64})
    ids = np.array([[int(tok) for tok in row.split()] for row in frame['ids']], dtype=np.int64)
    return Batch(ids, frame['label'].to_numpy())
