"""Desk-scale transfer experiments. Minutes of CPU each; run with TINYATTN_RUN_SLOW=1."""
import numpy as np
import pytest

from models.adapter import Placement
from models.backbone import Backbone, BackboneConfig, Decoder
from models.model import TinyAttnModel
from tasks.synthetic import get_task, make_split
from training.trainer import TrainerConfig, train
from utils.checkpoint import checkpoint_from_model, decode_checkpoint, encode_checkpoint, model_from_checkpoint

pytestmark = pytest.mark.slow

SEQ_LEN = 16
CONFIG = BackboneConfig()


def budget(**overrides):
    values = dict(epochs=20, batch_size=32, lr=3e-3, train_size=4096, val_size=512, schedule='linear')
    values.update(overrides)
    return TrainerConfig(**values)


@pytest.fixture(scope='module')
def pretrained():
    task = get_task('pretrain-nextset', seq_len=SEQ_LEN)
    rng = np.random.default_rng(0)
    model = TinyAttnModel(Backbone.initialize(CONFIG, seed=0), Decoder.initialize(CONFIG.hidden, task.num_classes, rng))
    report = train(model, task, budget(epochs=10, lr=1e-3, weight_decay=0.01, mode='full_finetune'))
    assert report.best_score >= 0.95
    return model


def backbone_copy(model):
    return model_from_checkpoint(decode_checkpoint(encode_checkpoint(checkpoint_from_model(model)))).backbone


def adapter_run(pretrained, task, seed=0, placement=Placement.SEQUENTIAL, num_heads=1):
    rng = np.random.default_rng(seed)
    model = TinyAttnModel(backbone_copy(pretrained), Decoder.initialize(CONFIG.hidden, task.num_classes, rng))
    model.freeze_backbone()
    model.attach_adapters(num_heads, 1, placement, True, rng)
    return model, train(model, task, budget(seed=seed))


@pytest.mark.parametrize('task_name', ['match-pair', 'first-last'])
def test_adapter_tuning_recovers_most_of_full_finetuning(pretrained, task_name):
    task = get_task(task_name, seq_len=SEQ_LEN)
    rng = np.random.default_rng(0)
    full = TinyAttnModel(backbone_copy(pretrained), Decoder.initialize(CONFIG.hidden, task.num_classes, rng))
    full_report = train(full, task, budget(lr=5e-4, weight_decay=0.01, mode='full_finetune'))

    _, report = adapter_run(pretrained, task)
    assert report.param_counts['percent_of_backbone'] <= 5.0
    assert report.best_score >= 0.9 * full_report.best_score
    assert report.best_score > 0.9


def test_sequential_and_parallel_placements_agree(pretrained):
    task = get_task('match-pair', seq_len=SEQ_LEN)
    scores = {
        placement: np.mean([adapter_run(pretrained, task, seed, placement)[1].best_score for seed in range(3)])
        for placement in (Placement.SEQUENTIAL, Placement.PARALLEL)
    }
    assert abs(scores[Placement.SEQUENTIAL] - scores[Placement.PARALLEL]) <= 0.02


def test_merged_heads_keep_single_head_accuracy(pretrained):
    task = get_task('match-pair', seq_len=SEQ_LEN)
    val_set = make_split(task, 'validation', 512)
    single, merged = [], []
    for seed in range(3):
        model, _ = adapter_run(pretrained, task, seed)
        single.append(model.accuracy(val_set))
        model.expand_adapters(4, np.random.default_rng([seed, 2]))
        train(model, task, budget(seed=seed, epochs=5, lr=1e-3))
        model.merge_adapters()
        assert all(a.num_heads == 1 and a.merged_scale == 4.0 for a in model.adapters)
        merged.append(model.accuracy(val_set))
    assert np.mean(merged) >= np.mean(single) - 0.01
