"""Run configuration: JSON file < environment < ``--set key=value`` flags.

A config file holds nested sections or flat dotted keys, e.g.

    {"task": {"name": "match-pair"}, "trainer.lr": 0.001}

``.env`` in the working directory is loaded first (never overriding the real
environment); ``TINYATTN_SEED`` then replaces ``trainer.seed``.
"""
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union, get_args, get_origin, get_type_hints

from dotenv import load_dotenv

from models.adapter import Placement
from models.backbone import BackboneConfig
from tasks.synthetic import SPLIT_CODES, TaskSpec, get_task
from training.trainer import TrainerConfig
from utils.errors import ConfigError
from utils.logger import setup_logger

logger = setup_logger(__name__)

SEED_ENV = 'TINYATTN_SEED'

COMMANDS = ('pretrain', 'adapt', 'finetune', 'merge', 'eval', 'count-params', 'export')

BACKBONE_PRESETS = {
    'toy': BackboneConfig(),
    'roberta-large': BackboneConfig(
        num_layers=24, hidden=1024, heads=16, ffn=4096, vocab_size=50265, max_len=514,
    ),
    'roberta-base': BackboneConfig(
        num_layers=12, hidden=768, heads=12, ffn=3072, vocab_size=50265, max_len=514,
    ),
}

_NEEDS_CHECKPOINT_IN = ('adapt', 'finetune', 'merge', 'eval')
_NEEDS_CHECKPOINT_OUT = ('pretrain', 'adapt', 'finetune')


@dataclass
class TaskConfig:
    name: str = 'pretrain-nextset'
    seq_len: int = 16
    seed: int = 0
    corpus_split: str = 'train'
    corpus_size: int = 1000
    eval_split: str = 'validation'


@dataclass
class AdapterConfig:
    num_heads: int = 1
    head_dim: int = 1
    placement: str = 'sequential'
    with_biases: bool = True
    init_scale: float = 0.01
    init_from: Optional[str] = None
    init_eps: float = 1e-3
    merge_on_eval: bool = False


@dataclass
class PathsConfig:
    checkpoint_in: Optional[str] = None
    checkpoint_out: Optional[str] = None
    metrics_out: Optional[str] = None
    corpus_out: Optional[str] = None


@dataclass
class RunConfig:
    command: str = ''
    task: TaskConfig = field(default_factory=TaskConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def task_spec(self) -> TaskSpec:
        try:
            return get_task(self.task.name, seed=self.task.seed,
                            vocab_size=self.backbone.vocab_size, seq_len=self.task.seq_len)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def validate(self, command: Optional[str] = None) -> 'RunConfig':
        """Check every invariant the given command relies on.

        Raises:
            ConfigError: On the first violated constraint.
        """
        command = command or self.command
        if command not in COMMANDS:
            raise ConfigError(f"Unknown command '{command}'. Use one of: {', '.join(COMMANDS)}")
        try:
            self.backbone.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if command == 'count-params':
            self._validate_adapter()
            return self

        self.trainer.validate()
        self.task_spec()
        if self.task.seq_len + 1 > self.backbone.max_len:
            raise ConfigError(
                f'task.seq_len {self.task.seq_len} plus CLS exceeds backbone.max_len {self.backbone.max_len}'
            )
        if command == 'adapt':
            self._validate_adapter()
            if self.adapter.init_from is not None:
                _require_file(self.adapter.init_from, 'adapter.init_from')
        for key in ('corpus_split', 'eval_split'):
            if getattr(self.task, key) not in SPLIT_CODES:
                raise ConfigError(f"task.{key} must be one of {', '.join(SPLIT_CODES)}")
        if command in _NEEDS_CHECKPOINT_IN:
            _require_file(self.paths.checkpoint_in, 'paths.checkpoint_in')
        if command in _NEEDS_CHECKPOINT_OUT and not self.paths.checkpoint_out:
            raise ConfigError(f'{command} needs paths.checkpoint_out')
        if command == 'export':
            if not self.paths.corpus_out:
                raise ConfigError('export needs paths.corpus_out')
            if self.task.corpus_size < 1:
                raise ConfigError(f'task.corpus_size must be >= 1, got {self.task.corpus_size}')
        return self

    def _validate_adapter(self) -> None:
        a = self.adapter
        if a.placement not in (Placement.SEQUENTIAL.value, Placement.PARALLEL.value):
            raise ConfigError(f"adapter.placement must be 'sequential' or 'parallel', got {a.placement!r}")
        for name in ('num_heads', 'head_dim'):
            value = getattr(a, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f'adapter.{name} must be a positive integer, got {value!r}')
        if a.init_scale <= 0 or a.init_eps < 0:
            raise ConfigError('adapter.init_scale must be > 0 and adapter.init_eps >= 0')


def _require_file(path: Optional[str], key: str) -> None:
    if not path:
        raise ConfigError(f'{key} is required')
    if not Path(path).is_file():
        raise ConfigError(f'{key} not found: {path}')


def flatten_config(config: Dict[str, Any], parent_key: str = '', sep: str = '.') -> Dict[str, Any]:
    """Recursively flatten nested sections into dotted keys."""
    flat = {}
    for k, v in config.items():
        key = f'{parent_key}{sep}{k}' if parent_key else k
        if isinstance(v, dict):
            flat.update(flatten_config(v, key, sep))
        else:
            flat[key] = v
    return flat


def parse_override(item: str) -> Tuple[str, Any]:
    """``key=value`` with the value read as JSON, falling back to the raw string."""
    key, sep, raw = item.partition('=')
    if not sep or not key.strip():
        raise ConfigError(f"--set expects key=value, got '{item}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


_TYPE_NAMES = {bool: 'a boolean', int: 'an integer', float: 'a number', str: 'a string'}


def _coerce(value: Any, annotation: Any, key: str) -> Any:
    """Check ``value`` against a field annotation; ints widen to float."""
    args = get_args(annotation)
    if get_origin(annotation) is Union:
        if value is None and type(None) in args:
            return None
        annotation = next(a for a in args if a is not type(None))
    if annotation is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    ok = isinstance(value, annotation) and not (annotation is int and isinstance(value, bool))
    if not ok:
        raise ConfigError(f'{key} must be {_TYPE_NAMES.get(annotation, annotation.__name__)}, got {value!r}')
    return value


def _build_section(cls, values: Dict[str, Any], section: str, base=None):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{section}': {', '.join(unknown)}")
    hints = get_type_hints(cls)
    values = {name: _coerce(value, hints[name], f'{section}.{name}') for name, value in values.items()}
    return replace(base, **values) if base is not None else cls(**values)


def from_flat(flat: Dict[str, Any]) -> RunConfig:
    sections: Dict[str, Dict[str, Any]] = {f.name: {} for f in fields(RunConfig) if f.name != 'command'}
    command = flat.pop('command', '')
    for key, value in flat.items():
        section, _, name = key.partition('.')
        if section not in sections or not name:
            raise ConfigError(f"Unknown config key '{key}'")
        sections[section][name] = value

    backbone_values = sections['backbone']
    preset = backbone_values.pop('preset', None)
    base = None
    if preset is not None:
        if preset not in BACKBONE_PRESETS:
            raise ConfigError(f"Unknown backbone preset '{preset}'. Use one of: {', '.join(BACKBONE_PRESETS)}")
        base = BACKBONE_PRESETS[preset]

    return RunConfig(
        command=command,
        task=_build_section(TaskConfig, sections['task'], 'task'),
        backbone=_build_section(BackboneConfig, backbone_values, 'backbone', base),
        adapter=_build_section(AdapterConfig, sections['adapter'], 'adapter'),
        trainer=_build_section(TrainerConfig, sections['trainer'], 'trainer'),
        paths=_build_section(PathsConfig, sections['paths'], 'paths'),
    )


def load_config(
    path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    command: Optional[str] = None,
    env_file: Optional[Path] = None,
) -> RunConfig:
    """Assemble a RunConfig from a JSON file, the environment and ``--set`` overrides.

    Args:
        path: JSON config file, or None for defaults only.
        overrides: ``key=value`` strings; they win over everything else.
        command: Command name; replaces any ``command`` key in the file.
        env_file: ``.env`` file to load, defaulting to ``./.env`` when present.

    Raises:
        ConfigError: If the file is missing or malformed, a key is unknown or
            ``TINYATTN_SEED`` is not an integer.
    """
    env_path = Path(env_file) if env_file else Path.cwd() / '.env'
    if env_path.exists():
        load_dotenv(env_path, override=False)

    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f'Config file not found: {path}')
        try:
            raw = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigError(f'Config file {path} is not valid JSON: {e}') from None
        if not isinstance(raw, dict):
            raise ConfigError(f'Config file {path} must hold a JSON object')

    flat = flatten_config(raw)
    seed = os.getenv(SEED_ENV)
    if seed:
        try:
            flat['trainer.seed'] = int(seed)
        except ValueError:
            raise ConfigError(f'{SEED_ENV} must be an integer, got {seed!r}') from None
        logger.debug(f'{SEED_ENV} overrides trainer.seed -> {seed}')
    for item in overrides:
        key, value = parse_override(item)
        flat[key] = value
    if command is not None:
        flat['command'] = command

    try:
        return from_flat(flat)
    except TypeError as e:
        raise ConfigError(f'Invalid config: {e}') from None
