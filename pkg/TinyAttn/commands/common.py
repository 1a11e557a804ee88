"""Helpers shared by the training commands."""
from dataclasses import replace
from typing import Tuple

import numpy as np

from models.backbone import Decoder
from models.model import TinyAttnModel
from tasks.synthetic import TaskSpec
from training.trainer import TrainReport
from utils.checkpoint import Checkpoint, checkpoint_from_model, load_checkpoint, save_checkpoint
from utils.config import RunConfig
from utils.errors import ConfigError
from utils.logger import setup_logger
from utils.metrics import emit_metrics

logger = setup_logger(__name__)

# Independent rng streams derived from the run seed.
DECODER_STREAM = 1
ADAPTER_STREAM = 2


def stream_rng(config: RunConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([config.trainer.seed, stream])


def with_checkpoint_backbone(config: RunConfig, ckpt: Checkpoint) -> RunConfig:
    """The checkpoint's backbone shape wins over whatever the config says."""
    if ckpt.backbone_config != config.backbone:
        logger.debug(f'using backbone shape from checkpoint: {ckpt.backbone_config}')
    config = replace(config, backbone=ckpt.backbone_config)
    if config.task.seq_len + 1 > config.backbone.max_len:
        raise ConfigError(
            f'task.seq_len {config.task.seq_len} plus CLS exceeds the checkpoint max_len {config.backbone.max_len}'
        )
    return config


def load_input(config: RunConfig) -> Tuple[Checkpoint, RunConfig]:
    ckpt = load_checkpoint(config.paths.checkpoint_in)
    return ckpt, with_checkpoint_backbone(config, ckpt)


def fresh_decoder(config: RunConfig, task: TaskSpec) -> Decoder:
    return Decoder.initialize(config.backbone.hidden, task.num_classes, stream_rng(config, DECODER_STREAM))


def save_outputs(model: TinyAttnModel, report: TrainReport, config: RunConfig, task: TaskSpec) -> None:
    ckpt = checkpoint_from_model(
        model, task=task.name, seed=config.trainer.seed, task_seq_len=task.seq_len, task_seed=task.seed,
    )
    save_checkpoint(ckpt, config.paths.checkpoint_out)
    if config.paths.metrics_out:
        extra = {
            'command': config.command,
            'seed': config.trainer.seed,
            'placement': model.placement.value,
            'num_heads': model.adapters[0].num_heads if model.adapters else 0,
            'head_dim': model.adapters[0].head_dim if model.adapters else 0,
            'config': config.to_dict(),
        }
        emit_metrics(report, config.paths.metrics_out, extra)
