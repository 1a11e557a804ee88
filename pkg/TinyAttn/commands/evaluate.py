"""eval: accuracy of a checkpoint on a task split, optionally after merging its adapter heads.

The task name, sequence length and data seed stored in the checkpoint win
over the config's ``task`` section.
"""
import json
from dataclasses import replace

from commands.common import with_checkpoint_backbone
from tasks.synthetic import make_split
from utils.checkpoint import load_checkpoint, model_from_checkpoint
from utils.config import RunConfig
from utils.logger import setup_logger

logger = setup_logger(__name__)


def run(config: RunConfig) -> int:
    ckpt = load_checkpoint(config.paths.checkpoint_in)
    if ckpt.task and ckpt.task_seq_len > 0:
        stored = replace(config.task, name=ckpt.task, seq_len=ckpt.task_seq_len, seed=ckpt.task_seed)
        if stored != config.task:
            logger.info(f'using task from checkpoint: {ckpt.task} (seq_len={ckpt.task_seq_len}, seed={ckpt.task_seed})')
        config = replace(config, task=stored)
    config = with_checkpoint_backbone(config, ckpt)
    task = config.task_spec()
    model = model_from_checkpoint(ckpt)
    if config.adapter.merge_on_eval and model.adapters:
        model.merge_adapters()

    split = make_split(task, config.task.eval_split, config.trainer.val_size)
    accuracy = model.accuracy(split)
    result = {
        'task': task.name,
        'seq_len': task.seq_len,
        'split': config.task.eval_split,
        'num_examples': len(split),
        'accuracy': accuracy,
        'merged': bool(config.adapter.merge_on_eval and model.adapters),
    }
    print(json.dumps(result, sort_keys=True))
    logger.info(f'✓ {task.name} {config.task.eval_split} accuracy {accuracy:.4f}')
    return 0
