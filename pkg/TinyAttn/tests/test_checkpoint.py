import json
import struct

import numpy as np
import pytest

from models.adapter import Placement
from models.backbone import Backbone, Decoder
from models.model import TinyAttnModel
from tasks.synthetic import draw_batch, get_task
from utils.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    checkpoint_from_model,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from utils.errors import CheckpointError


@pytest.fixture
def adapted_model(toy_config):
    rng = np.random.default_rng(3)
    model = TinyAttnModel(Backbone.initialize(toy_config, seed=3), Decoder.initialize(toy_config.hidden, 2, rng))
    model.freeze_backbone()
    model.attach_adapters(4, 2, Placement.PARALLEL, True, rng, init_scale=0.5)
    return model


def test_load_then_save_is_byte_identical(adapted_model, tmp_path):
    first = save_checkpoint(checkpoint_from_model(adapted_model, task='match-pair', seed=5), tmp_path / 'a.ckpt')
    second = save_checkpoint(load_checkpoint(first), tmp_path / 'b.ckpt')
    assert first.read_bytes() == second.read_bytes()


def test_reloaded_model_reproduces_logits_exactly(adapted_model, tmp_path):
    path = save_checkpoint(checkpoint_from_model(adapted_model), tmp_path / 'm.ckpt')
    restored = model_from_checkpoint(load_checkpoint(path))
    batch = draw_batch(get_task('match-pair', seq_len=8), 0, 16)
    assert np.array_equal(adapted_model.logits(batch), restored.logits(batch))
    assert restored.placement is Placement.PARALLEL
    assert restored.adapters[0].num_heads == 4 and restored.adapters[0].head_dim == 2


def test_restored_trainability(adapted_model):
    restored = model_from_checkpoint(decode_checkpoint(encode_checkpoint(checkpoint_from_model(adapted_model))))
    assert not any(t.trainable for _, t in restored.backbone.named_tensors())
    assert set(restored.trainable_parameters()) == set(adapted_model.trainable_parameters())


def test_header_metadata(adapted_model):
    ckpt = decode_checkpoint(encode_checkpoint(checkpoint_from_model(adapted_model, task='first-last', seed=9)))
    assert ckpt.task == 'first-last' and ckpt.seed == 9 and ckpt.num_classes == 2
    assert ckpt.adapter['placement'] == 'parallel'
    assert ckpt.adapter['merged_scale'] == [1.0] * adapted_model.backbone.config.num_layers
    assert ckpt.backbone_config == adapted_model.backbone.config


def test_model_without_adapters(toy_config):
    rng = np.random.default_rng(0)
    model = TinyAttnModel(Backbone.initialize(toy_config, seed=0), Decoder.initialize(toy_config.hidden, 4, rng))
    restored = model_from_checkpoint(decode_checkpoint(encode_checkpoint(checkpoint_from_model(model))))
    assert restored.adapters is None and restored.placement is Placement.NONE
    assert restored.num_classes == 4


def test_bad_magic(adapted_model):
    raw = encode_checkpoint(checkpoint_from_model(adapted_model))
    with pytest.raises(CheckpointError, match='not a tinyattn checkpoint'):
        decode_checkpoint(b'NOTATTN!' + raw[len(MAGIC):])


def test_version_mismatch(adapted_model):
    raw = bytearray(encode_checkpoint(checkpoint_from_model(adapted_model)))
    struct.pack_into('<I', raw, len(MAGIC), FORMAT_VERSION + 1)
    with pytest.raises(CheckpointError, match='format version'):
        decode_checkpoint(bytes(raw))


def test_truncated_payload(adapted_model):
    raw = encode_checkpoint(checkpoint_from_model(adapted_model))
    with pytest.raises(CheckpointError, match='truncated'):
        decode_checkpoint(raw[:-8])


def test_trailing_bytes(adapted_model):
    raw = encode_checkpoint(checkpoint_from_model(adapted_model))
    with pytest.raises(CheckpointError, match='trailing'):
        decode_checkpoint(raw + b'\x00' * 8)


def test_malformed_header(adapted_model):
    raw = encode_checkpoint(checkpoint_from_model(adapted_model))
    _, header_len = struct.unpack_from('<II', raw, len(MAGIC))
    start = len(MAGIC) + 8
    broken = raw[:start] + b'{' * header_len + raw[start + header_len:]
    with pytest.raises(CheckpointError, match='malformed header'):
        decode_checkpoint(broken)


def rewrite_header(raw, edit):
    _, header_len = struct.unpack_from('<II', raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start:start + header_len])
    edit(header)
    new_header = json.dumps(header, sort_keys=True, separators=(',', ':')).encode()
    return MAGIC + struct.pack('<II', FORMAT_VERSION, len(new_header)) + new_header + raw[start + header_len:]


def test_duplicate_tensor_names(adapted_model):
    raw = encode_checkpoint(checkpoint_from_model(adapted_model))

    def rename(header):
        header['tensors'][1]['name'] = header['tensors'][0]['name']

    with pytest.raises(CheckpointError, match='twice'):
        decode_checkpoint(rewrite_header(raw, rename))


def _drop(*path):
    def edit(header):
        *parents, last = path
        for key in parents:
            header = header[key]
        del header[last]
    return edit


def _set(value, *path):
    def edit(header):
        *parents, last = path
        for key in parents:
            header = header[key]
        header[last] = value
    return edit


@pytest.mark.parametrize('edit', [
    _drop('decoder'),
    _drop('adapter'),
    _drop('task'),
    _drop('seed'),
    _drop('backbone_config'),
    _drop('decoder', 'num_classes'),
    _drop('task', 'seq_len'),
    _drop('adapter', 'with_biases'),
    _drop('tensors', 0, 'name'),
    _set(5, 'backbone_config', 'heads'),
    _set(0, 'backbone_config', 'num_layers'),
    _set(7, 'backbone_config', 'depth'),
    _set('none', 'adapter', 'placement'),
    _set([1.0], 'adapter', 'merged_scale'),
    _set('wide', 'tensors', 0, 'shape'),
    _set(None, 'decoder'),
], ids=[
    'no-decoder', 'no-adapter', 'no-task', 'no-seed', 'no-backbone', 'no-num-classes', 'no-task-seq-len',
    'no-with-biases', 'nameless-tensor', 'heads-do-not-divide', 'zero-layers', 'unknown-backbone-key',
    'adapter-placement-none', 'short-merged-scale', 'shape-not-a-list', 'null-decoder',
])
def test_incomplete_or_invalid_header(adapted_model, edit):
    raw = encode_checkpoint(checkpoint_from_model(adapted_model))
    with pytest.raises(CheckpointError, match='malformed header'):
        decode_checkpoint(rewrite_header(raw, edit))


def test_wrong_tensor_shape_on_rebuild(adapted_model):
    ckpt = checkpoint_from_model(adapted_model)
    ckpt.tensors['backbone.token_embedding'] = ckpt.tensors['backbone.token_embedding'].T.copy()
    with pytest.raises(CheckpointError, match='token_embedding has shape'):
        model_from_checkpoint(ckpt)
    ckpt = checkpoint_from_model(adapted_model)
    ckpt.tensors['decoder.bias'] = np.zeros(3)
    with pytest.raises(CheckpointError, match='decoder.bias'):
        model_from_checkpoint(ckpt)


def test_header_carries_task_length_and_seed(adapted_model):
    ckpt = checkpoint_from_model(adapted_model, task='first-last', seed=2, task_seq_len=12, task_seed=4)
    restored = decode_checkpoint(encode_checkpoint(ckpt))
    assert (restored.task, restored.task_seq_len, restored.task_seed, restored.seed) == ('first-last', 12, 4, 2)
    assert ckpt.header()['task'] == {'name': 'first-last', 'seq_len': 12, 'seed': 4}


def test_missing_tensor_on_rebuild(adapted_model):
    ckpt = checkpoint_from_model(adapted_model)
    del ckpt.tensors['decoder.bias']
    with pytest.raises(CheckpointError, match='decoder.bias'):
        model_from_checkpoint(ckpt)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match='not found'):
        load_checkpoint(tmp_path / 'absent.ckpt')
