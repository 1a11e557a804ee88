"""adapt: freeze a pretrained backbone and train tiny-attention adapters plus a new decoder.

With ``adapter.init_from`` pointing at a trained single-head run, that run's
adapters and decoder seed the new model and every adapter is expanded into
``adapter.num_heads`` perturbed copies.
"""
from dataclasses import replace

import numpy as np

from commands.common import ADAPTER_STREAM, fresh_decoder, load_input, save_outputs, stream_rng
from models.adapter import Placement
from models.model import TinyAttnModel
from training.trainer import TrainMode, train
from utils.checkpoint import Checkpoint, load_checkpoint, model_from_checkpoint
from utils.config import RunConfig
from utils.errors import ConfigError
from utils.logger import setup_logger

logger = setup_logger(__name__)


def _from_single_head(config: RunConfig, ckpt: Checkpoint, task_name: str) -> TinyAttnModel:
    source = load_checkpoint(config.adapter.init_from)
    meta = source.adapter
    if meta is None or meta['num_heads'] != 1:
        raise ConfigError(f'adapter.init_from must be a single-head adapter checkpoint: {config.adapter.init_from}')
    if source.backbone_config != config.backbone:
        raise ConfigError('adapter.init_from was trained on a different backbone shape')
    differing = [
        name for name, data in ckpt.tensors.items()
        if name.startswith('backbone.') and not np.array_equal(data, source.tensors.get(name))
    ]
    if differing:
        raise ConfigError(
            f'adapter.init_from was trained on a different backbone than paths.checkpoint_in ({differing[0]} differs)'
        )
    if source.task and source.task != task_name:
        logger.warning(f"adapter.init_from was trained on '{source.task}', adapting to '{task_name}'")
    if meta['placement'] != config.adapter.placement:
        logger.warning(f"keeping the single-head run's placement '{meta['placement']}'")

    model = model_from_checkpoint(source)
    model.expand_adapters(config.adapter.num_heads, stream_rng(config, ADAPTER_STREAM), config.adapter.init_eps)
    logger.info(f'Expanded single-head adapters into {config.adapter.num_heads} heads')
    return model


def run(config: RunConfig) -> int:
    ckpt, config = load_input(config)
    task = config.task_spec()
    a = config.adapter

    if a.init_from is not None:
        model = _from_single_head(config, ckpt, task.name)
        if model.num_classes != task.num_classes:
            raise ConfigError(f'adapter.init_from decoder has {model.num_classes} classes, task needs {task.num_classes}')
    else:
        model = TinyAttnModel(model_from_checkpoint(ckpt).backbone, fresh_decoder(config, task))
        model.attach_adapters(
            a.num_heads, a.head_dim, Placement(a.placement), a.with_biases,
            stream_rng(config, ADAPTER_STREAM), a.init_scale,
        )
    model.freeze_backbone()

    report = train(model, task, replace(config.trainer, mode=TrainMode.ADAPTER_TUNE.value))
    save_outputs(model, report, config, task)
    return 0
