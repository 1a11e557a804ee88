"""pretrain: train a backbone from scratch on the pretraining task."""
from dataclasses import replace

from commands.common import fresh_decoder, save_outputs
from models.backbone import Backbone
from models.model import TinyAttnModel
from tasks.synthetic import LabelRule
from training.trainer import TrainMode, train
from utils.config import RunConfig
from utils.logger import setup_logger

logger = setup_logger(__name__)


def run(config: RunConfig) -> int:
    task = config.task_spec()
    if task.rule is not LabelRule.PRETRAIN_NEXTSET:
        logger.warning(f"Pretraining on '{task.name}' instead of '{LabelRule.PRETRAIN_NEXTSET.value}'")
    trainer = replace(config.trainer, mode=TrainMode.FULL_FINETUNE.value)

    backbone = Backbone.initialize(config.backbone, seed=trainer.seed)
    model = TinyAttnModel(backbone, fresh_decoder(config, task))
    report = train(model, task, trainer)
    save_outputs(model, report, config, task)
    return 0
