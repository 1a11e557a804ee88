import numpy as np
import pytest

from core.gradcheck import gradient_check
from core.tensor import backward
from models.adapter import Placement
from models.backbone import CLS_ID, Backbone, Batch, Decoder
from models.model import EVAL_BATCH_SIZE, TinyAttnModel, itemize_params


def make_model(backbone, rng, num_classes=2, num_heads=1, placement=Placement.SEQUENTIAL, init_scale=0.01):
    model = TinyAttnModel(backbone, Decoder.initialize(backbone.config.hidden, num_classes, rng))
    model.freeze_backbone()
    model.attach_adapters(num_heads, 1, placement, True, rng, init_scale)
    return model


def make_batch(rng, config, batch=2, seq=8, num_classes=2):
    ids = rng.integers(1, config.vocab_size, size=(batch, seq))
    ids[:, 0] = CLS_ID
    return Batch(ids, rng.integers(num_classes, size=batch))


@pytest.mark.parametrize('placement', [Placement.SEQUENTIAL, Placement.PARALLEL])
def test_adapter_tuned_model_gradients_match_finite_differences(toy_backbone, toy_config, rng, placement):
    model = make_model(toy_backbone, rng, num_heads=2, placement=placement, init_scale=1.0)
    batch = make_batch(rng, toy_config, seq=9)
    params = model.trainable_parameters()
    for name, t in params.items():
        t.name = name

    errors = gradient_check(lambda: model.loss(batch)[0], list(params.values()), h=1e-5)
    assert set(errors) == set(params)
    worst = max(errors, key=errors.get)
    assert errors[worst] <= 1e-4, (worst, errors[worst])
    # a key bias shifts every score of a query equally, so softmax cancels it
    key_biases = [t for name, t in params.items() if name.endswith('.bk')]
    assert len(key_biases) == toy_config.num_layers
    for t in key_biases:
        np.testing.assert_allclose(t.grad, 0.0, atol=1e-12)


def test_full_finetune_gradients_reach_backbone(toy_config, rng):
    backbone = Backbone.initialize(toy_config, seed=3)
    model = TinyAttnModel(backbone, Decoder.initialize(toy_config.hidden, 2, rng))
    model.unfreeze_backbone()
    batch = make_batch(rng, toy_config)
    layer = backbone.layers[0]
    checked = {'ln1_gamma': layer.ln1_gamma, 'bq': layer.bq, 'ffn_b1': layer.ffn_b1, 'ln2_beta': layer.ln2_beta}
    for name, t in checked.items():
        t.name = name
    errors = gradient_check(lambda: model.loss(batch)[0], list(checked.values()))
    assert max(errors.values()) <= 1e-4, errors


def test_frozen_backbone_gets_no_gradients(toy_backbone, toy_config, rng):
    model = make_model(toy_backbone, rng)
    assert all(not name.startswith('backbone.') for name in model.trainable_parameters())
    loss, tape = model.loss(make_batch(rng, toy_config, batch=4))
    backward(tape, loss, params=model.trainable_parameters().values())
    assert all(t.grad is None for _, t in toy_backbone.named_tensors())
    assert all(t.grad is not None for t in model.trainable_parameters().values())


def test_placement_and_adapters_must_agree(toy_backbone, rng):
    decoder = Decoder.initialize(toy_backbone.config.hidden, 2, rng)
    with pytest.raises(ValueError, match='inconsistent'):
        TinyAttnModel(toy_backbone, decoder, None, Placement.SEQUENTIAL)


def test_count_trainable_matches_itemized_counts(toy_backbone, toy_config, rng):
    model = make_model(toy_backbone, rng, num_classes=4, num_heads=2)
    expected = itemize_params(toy_config, 4, 'adapter_tune', num_heads=2, head_dim=1, with_biases=True)
    report = model.param_report()
    for key in ('adapter', 'decoder', 'backbone', 'total', 'backbone_total'):
        assert report[key] == expected[key], key


def test_itemize_full_finetune_counts_backbone(toy_config):
    counts = itemize_params(toy_config, 2, 'full_finetune')
    assert counts['adapter'] == 0
    assert counts['backbone'] == counts['backbone_total']
    assert counts['total'] == counts['backbone'] + counts['decoder']
    with pytest.raises(ValueError):
        itemize_params(toy_config, 2, 'head_only')


def test_predict_is_chunked_and_untaped(toy_backbone, toy_config, rng):
    model = make_model(toy_backbone, rng)
    batch = make_batch(rng, toy_config, batch=EVAL_BATCH_SIZE + 3)
    logits = model.logits(batch)
    full, _ = model.forward(batch)
    np.testing.assert_allclose(logits, full.values, atol=1e-12)
    assert model.predict(batch).shape == (EVAL_BATCH_SIZE + 3,)
    assert 0.0 <= model.accuracy(batch) <= 1.0


def test_merge_adapters_matches_average_adapters_logits(toy_backbone, toy_config, rng):
    model = make_model(toy_backbone, rng, num_heads=4, init_scale=1.0)
    batch = make_batch(rng, toy_config, batch=16)
    adapters = model.adapters
    averaged = model.average_adapters().logits(batch)
    model.adapters = adapters
    merged = model.merge_adapters().logits(batch)
    assert np.abs(merged - averaged).max() <= 1e-12
