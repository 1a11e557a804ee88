"""Command dispatch.

Every CLI command maps to a module under ``commands/`` exposing
``run(config) -> int``. Modules are imported lazily, only for the command
actually requested.

Usage:
    from runner import run
    from utils.config import load_config
    run(load_config('configs/adapt_match_pair.json', command='adapt'))
"""
import importlib
import time
from typing import Dict, Tuple

from utils.config import RunConfig
from utils.logger import setup_logger

logger = setup_logger(__name__)


# command -> (module_path, function_name, summary)
COMMAND_ROUTES: Dict[str, Tuple[str, str, str]] = {
    'pretrain': ('commands.pretrain', 'run', 'train a backbone from scratch on the pretraining task'),
    'adapt': ('commands.adapt', 'run', 'freeze a pretrained backbone and train tiny-attention adapters'),
    'finetune': ('commands.finetune', 'run', 'full fine-tuning baseline'),
    'merge': ('commands.merge', 'run', 'average adapter heads into one'),
    'eval': ('commands.evaluate', 'run', 'report the accuracy of a checkpoint'),
    'count-params': ('commands.count_params', 'run', 'print itemized trainable-parameter counts'),
    'export': ('commands.export', 'run', 'write a task split as a line-delimited corpus'),
}


def run(config: RunConfig) -> int:
    """Validate ``config`` for its command and execute it.

    Returns:
        The command's exit status (0 on success).

    Raises:
        ConfigError: If the config is invalid for the command.
        NumericError: If training diverges.
        CheckpointError: If a checkpoint cannot be read.
        OSError: If an artifact cannot be written.
    """
    config.validate()
    module_path, func_name, _ = COMMAND_ROUTES[config.command]
    command_func = getattr(importlib.import_module(module_path), func_name)

    logger.info(f'Running: {config.command}')
    started = time.perf_counter()
    status = command_func(config)
    logger.info(f'✓ {config.command} finished in {time.perf_counter() - started:.1f}s')
    return status
