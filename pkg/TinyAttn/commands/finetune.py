"""finetune: full fine-tuning baseline on top of a pretrained backbone."""
from dataclasses import replace

from commands.common import fresh_decoder, load_input, save_outputs
from models.model import TinyAttnModel
from training.trainer import TrainMode, train
from utils.checkpoint import model_from_checkpoint
from utils.config import RunConfig


def run(config: RunConfig) -> int:
    ckpt, config = load_input(config)
    task = config.task_spec()
    pretrained = model_from_checkpoint(ckpt)
    model = TinyAttnModel(pretrained.backbone, fresh_decoder(config, task))
    report = train(model, task, replace(config.trainer, mode=TrainMode.FULL_FINETUNE.value))
    save_outputs(model, report, config, task)
    return 0
