"""merge: collapse every multi-head adapter into one head (see ``models.adapter.merge_heads``).

Without ``paths.checkpoint_out`` the result lands next to the input as
``<name>.merged.ckpt``.
"""
from utils.checkpoint import checkpoint_from_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from utils.config import RunConfig
from utils.errors import ConfigError
from utils.file_utils import make_output_name
from utils.logger import setup_logger

logger = setup_logger(__name__)


def run(config: RunConfig) -> int:
    ckpt = load_checkpoint(config.paths.checkpoint_in)
    if ckpt.adapter is None:
        raise ConfigError(f'{config.paths.checkpoint_in} has no adapters to merge')
    model = model_from_checkpoint(ckpt)
    heads = ckpt.adapter['num_heads']
    if heads == 1:
        logger.warning('Adapters already have a single head; merge leaves them unchanged')
    model.merge_adapters()
    out = make_output_name(config.paths.checkpoint_in, 'merged', config.paths.checkpoint_out)
    merged = checkpoint_from_model(
        model, task=ckpt.task, seed=ckpt.seed, task_seq_len=ckpt.task_seq_len, task_seed=ckpt.task_seed,
    )
    save_checkpoint(merged, out)
    logger.info(f'✓ Merged {heads} heads into 1 per layer')
    return 0
