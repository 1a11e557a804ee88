import json

import pytest

from utils.config import (
    BACKBONE_PRESETS,
    SEED_ENV,
    flatten_config,
    load_config,
    parse_override,
)
from utils.errors import ConfigError


def write_json(path, payload):
    path.write_text(json.dumps(payload), encoding='utf-8')
    return path


def test_flatten_config():
    nested = {'trainer': {'lr': 0.01, 'seed': 2}, 'task.name': 'majority'}
    assert flatten_config(nested) == {'trainer.lr': 0.01, 'trainer.seed': 2, 'task.name': 'majority'}


@pytest.mark.parametrize('item, expected', [
    ('trainer.lr=0.005', ('trainer.lr', 0.005)),
    ('adapter.with_biases=false', ('adapter.with_biases', False)),
    ('task.name=match-pair', ('task.name', 'match-pair')),
    ('paths.checkpoint_in=runs/a.ckpt', ('paths.checkpoint_in', 'runs/a.ckpt')),
    ('trainer.grad_clip=null', ('trainer.grad_clip', None)),
])
def test_parse_override(item, expected):
    assert parse_override(item) == expected


def test_parse_override_needs_equals():
    with pytest.raises(ConfigError, match='key=value'):
        parse_override('trainer.lr')


def test_nested_and_dotted_keys_mix(tmp_path):
    path = write_json(tmp_path / 'run.json', {'task': {'name': 'first-last'}, 'trainer.epochs': 3})
    config = load_config(path)
    assert config.task.name == 'first-last'
    assert config.trainer.epochs == 3
    assert config.trainer.lr == 1e-3


def test_precedence_file_env_flags(tmp_path, monkeypatch):
    path = write_json(tmp_path / 'run.json', {'trainer': {'seed': 1}})
    assert load_config(path).trainer.seed == 1
    monkeypatch.setenv(SEED_ENV, '2')
    assert load_config(path).trainer.seed == 2
    assert load_config(path, ['trainer.seed=3']).trainer.seed == 3


def test_seed_from_dotenv(tmp_path, monkeypatch):
    # load_dotenv writes os.environ; register the key so teardown removes it
    monkeypatch.setenv(SEED_ENV, '0')
    monkeypatch.delenv(SEED_ENV)
    (tmp_path / '.env').write_text(f'{SEED_ENV}=11\n', encoding='utf-8')
    config = load_config()
    assert config.trainer.seed == 11


def test_real_environment_beats_dotenv(tmp_path, monkeypatch):
    (tmp_path / '.env').write_text(f'{SEED_ENV}=11\n', encoding='utf-8')
    monkeypatch.setenv(SEED_ENV, '4')
    assert load_config().trainer.seed == 4


def test_bad_seed_variable(monkeypatch):
    monkeypatch.setenv(SEED_ENV, 'seven')
    with pytest.raises(ConfigError, match=SEED_ENV):
        load_config()


def test_backbone_preset():
    config = load_config(overrides=['backbone.preset=roberta-large', 'backbone.num_layers=2'])
    large = BACKBONE_PRESETS['roberta-large']
    assert config.backbone.hidden == large.hidden == 1024
    assert config.backbone.num_layers == 2


@pytest.mark.parametrize('overrides, message', [
    (['trainer.learning_rate=0.1'], "Unknown key"),
    (['optimizer.lr=0.1'], "Unknown config key"),
    (['backbone.preset=gpt'], "Unknown backbone preset"),
])
def test_unknown_keys(overrides, message):
    with pytest.raises(ConfigError, match=message):
        load_config(overrides=overrides)


@pytest.mark.parametrize('override, message', [
    ('trainer.lr=fast', 'trainer.lr must be a number'),
    ('task.seq_len=long', 'task.seq_len must be an integer'),
    ('task.seq_len=8.5', 'task.seq_len must be an integer'),
    ('trainer.epochs=true', 'trainer.epochs must be an integer'),
    ('adapter.with_biases=1', 'adapter.with_biases must be a boolean'),
    ('task.name=3', 'task.name must be a string'),
    ('backbone.hidden="wide"', 'backbone.hidden must be an integer'),
    ('trainer.grad_clip=[1]', 'trainer.grad_clip must be a number'),
])
def test_wrong_value_types(override, message):
    with pytest.raises(ConfigError, match=message):
        load_config(overrides=[override])


def test_integers_widen_to_float_and_optionals_accept_null():
    config = load_config(overrides=['trainer.lr=1', 'trainer.grad_clip=null', 'adapter.init_scale=2'])
    assert config.trainer.lr == 1.0 and isinstance(config.trainer.lr, float)
    assert config.trainer.grad_clip is None
    assert isinstance(config.adapter.init_scale, float)
    assert load_config(overrides=['trainer.grad_clip=5']).trainer.grad_clip == 5.0


def test_roberta_base_preset():
    base = load_config(overrides=['backbone.preset=roberta-base']).backbone
    assert (base.num_layers, base.hidden, base.heads, base.ffn) == (12, 768, 12, 3072)
    assert (base.vocab_size, base.max_len) == (50265, 514)


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError, match='not found'):
        load_config(tmp_path / 'absent.json')
    bad = tmp_path / 'bad.json'
    bad.write_text('{"trainer": ', encoding='utf-8')
    with pytest.raises(ConfigError, match='not valid JSON'):
        load_config(bad)
    listing = write_json(tmp_path / 'list.json', [1, 2])
    with pytest.raises(ConfigError, match='JSON object'):
        load_config(listing)


def test_command_argument_wins(tmp_path):
    path = write_json(tmp_path / 'run.json', {'command': 'pretrain'})
    assert load_config(path, command='eval').command == 'eval'


@pytest.mark.parametrize('overrides, message', [
    (['trainer.warmup_fraction=1.5'], 'warmup_fraction'),
    (['adapter.placement=inside'], 'placement'),
    (['adapter.num_heads=0'], 'num_heads'),
    (['task.name=parity'], "Unknown task"),
    (['task.seq_len=40'], 'max_len'),
    (['task.eval_split=dev'], 'eval_split'),
    (['paths.checkpoint_in=missing.ckpt', 'paths.checkpoint_out=out.ckpt'], 'checkpoint_in not found'),
])
def test_validation_errors_for_adapt(overrides, message):
    config = load_config(overrides=overrides, command='adapt')
    with pytest.raises(ConfigError, match=message):
        config.validate()


def test_output_checkpoint_required(tmp_path):
    (tmp_path / 'in.ckpt').write_bytes(b'')
    config = load_config(overrides=['paths.checkpoint_in=in.ckpt'], command='adapt')
    with pytest.raises(ConfigError, match='checkpoint_out'):
        config.validate()


def test_count_params_skips_training_checks():
    config = load_config(overrides=['trainer.warmup_fraction=2.0'], command='count-params')
    assert config.validate() is config


def test_export_needs_output_path():
    with pytest.raises(ConfigError, match='corpus_out'):
        load_config(command='export').validate()


def test_unknown_command():
    with pytest.raises(ConfigError, match='Unknown command'):
        load_config(command='distill').validate()


def test_to_dict_round_trips_through_flat_keys(tmp_path):
    config = load_config(overrides=['task.name=majority', 'adapter.num_heads=4'])
    path = write_json(tmp_path / 'dump.json', flatten_config(config.to_dict()))
    assert load_config(path) == config
